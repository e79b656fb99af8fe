//! Exact round laws of the classic protocols and the absorbing chain on the
//! informed count, for small n.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ProtocolKind, ProtocolSpec};

/// Largest n the oracle accepts.
pub const MAX_ORACLE_N: usize = 300;
/// Largest n for which the exact rational fallback is attempted.
pub const MAX_RATIONAL_N: usize = 60;
/// Digits the inclusion-exclusion sum may lose before it is distrusted.
const MAX_LOST_DIGITS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("no exact round law for {0}")]
    Unsupported(String),
    #[error("inclusion-exclusion lost {lost_digits:.1} digits at n = {n}, k = {k}, j = {j}")]
    NumericInstability {
        n: usize,
        k: usize,
        j: usize,
        lost_digits: f64,
    },
    #[error("the chain never leaves k = {k}")]
    AbsorbingTrap { k: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

type Result<T> = std::result::Result<T, OracleError>;

/// Law of the number of nodes newly informed in one round from `k` informed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionDistribution {
    pub n: usize,
    pub k: usize,
    /// probs[j] = Pr[exactly j newly informed], j in 0..=n-k.
    pub probs: Vec<f64>,
}

impl TransitionDistribution {
    fn from_raw(n: usize, k: usize, mut probs: Vec<f64>) -> Result<Self> {
        debug_assert_eq!(probs.len(), n - k + 1);
        for p in probs.iter_mut() {
            if *p < 0.0 && *p >= -1e-14 {
                *p = 0.0;
            }
        }
        let total = neumaier_sum(probs.iter().copied());
        if probs.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) || (total - 1.0).abs() > 1e-12 {
            return Err(OracleError::NumericInstability {
                n,
                k,
                j: 0,
                lost_digits: f64::INFINITY,
            });
        }
        Ok(Self { n, k, probs })
    }

    pub fn mean(&self) -> f64 {
        neumaier_sum(self.probs.iter().enumerate().map(|(j, p)| j as f64 * p))
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        neumaier_sum(
            self.probs
                .iter()
                .enumerate()
                .map(|(j, p)| (j as f64 - m).powi(2) * p),
        )
    }

    /// Per-node informing probability implied by the law.
    pub fn marginal(&self) -> f64 {
        self.mean() / (self.n - self.k) as f64
    }

    /// Probability that nobody new is informed.
    pub fn stay(&self) -> f64 {
        self.probs[0]
    }
}

/// Compensated summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

fn check(n: usize, k: usize, p: f64) -> Result<()> {
    if n < 2 || n > MAX_ORACLE_N {
        return Err(OracleError::Unsupported(format!(
            "n = {n} outside 2..={MAX_ORACLE_N}"
        )));
    }
    if k == 0 || k >= n {
        return Err(OracleError::InvalidInput(format!(
            "need 1 <= k < n, got k = {k}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(OracleError::InvalidInput(format!(
            "success probability {p}"
        )));
    }
    Ok(())
}

fn pool(n: usize, include_self: bool) -> f64 {
    if include_self {
        n as f64
    } else {
        (n - 1) as f64
    }
}

fn binomial_pmf(trials: usize, q: f64) -> Vec<f64> {
    let mut out = vec![0.0; trials + 1];
    if q <= 0.0 {
        out[0] = 1.0;
        return out;
    }
    if q >= 1.0 {
        out[trials] = 1.0;
        return out;
    }
    let mut coef = 1.0f64;
    for (j, slot) in out.iter_mut().enumerate() {
        if j > 0 {
            coef = coef * (trials + 1 - j) as f64 / j as f64;
        }
        *slot = coef * q.powi(j as i32) * (1.0 - q).powi((trials - j) as i32);
    }
    out
}

/// Pull: every uninformed node succeeds independently with probability p k / n.
pub fn transition_pull(n: usize, k: usize, success_prob: f64) -> Result<TransitionDistribution> {
    pull_law(n, k, success_prob, true)
}

fn pull_law(n: usize, k: usize, p: f64, include_self: bool) -> Result<TransitionDistribution> {
    check(n, k, p)?;
    let q = p * k as f64 / pool(n, include_self);
    TransitionDistribution::from_raw(n, k, binomial_pmf(n - k, q))
}

/// How the push law is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arithmetic {
    /// Inclusion-exclusion in floating point, failing when cancellation is detected.
    Float,
    /// Inclusion-exclusion in exact rational arithmetic.
    Rational,
    /// Float first, then exact rationals for small n, else the occupancy recursion.
    Auto,
}

/// Push: k informed nodes each place one call that succeeds with probability p.
pub fn transition_push(n: usize, k: usize, success_prob: f64) -> Result<TransitionDistribution> {
    push_law(n, k, success_prob, true, Arithmetic::Auto)
}

/// Push law with an explicit arithmetic mode.
pub fn transition_push_with(
    n: usize,
    k: usize,
    success_prob: f64,
    arithmetic: Arithmetic,
) -> Result<TransitionDistribution> {
    push_law(n, k, success_prob, true, arithmetic)
}

fn push_law(
    n: usize,
    k: usize,
    p: f64,
    include_self: bool,
    arithmetic: Arithmetic,
) -> Result<TransitionDistribution> {
    check(n, k, p)?;
    let probs = push_hits(n, k, p, include_self, arithmetic)?;
    TransitionDistribution::from_raw(n, k, probs)
}

/// Law of the number of distinct uninformed nodes hit by k pushes.
fn push_hits(
    n: usize,
    k: usize,
    p: f64,
    include_self: bool,
    arithmetic: Arithmetic,
) -> Result<Vec<f64>> {
    let big_n = pool(n, include_self);
    match arithmetic {
        Arithmetic::Float => push_hits_float(n, k, p, big_n),
        Arithmetic::Rational => push_hits_rational(n, k, p, big_n),
        Arithmetic::Auto => match push_hits_float(n, k, p, big_n) {
            Ok(v) => Ok(v),
            Err(OracleError::NumericInstability { .. }) if n <= MAX_RATIONAL_N => {
                log::debug!("push law at n = {n}, k = {k}: switching to exact rationals");
                push_hits_rational(n, k, p, big_n)
            }
            Err(OracleError::NumericInstability { .. }) => {
                log::debug!("push law at n = {n}, k = {k}: switching to the occupancy recursion");
                Ok(push_hits_occupancy(n, k, p, big_n))
            }
            Err(e) => Err(e),
        },
    }
}

// Pr[hit set is exactly a given j-set S] = sum_i (-1)^i C(j,i) (1 - p(u-j+i)/N)^k:
// inclusion-exclusion over the nodes of S that are missed, where every call
// must avoid the u-j uninformed nodes outside S.
fn push_hits_float(n: usize, k: usize, p: f64, big_n: f64) -> Result<Vec<f64>> {
    let u = n - k;
    let mut out = Vec::with_capacity(u + 1);
    let mut outer = 1.0f64;
    for j in 0..=u {
        if j > 0 {
            outer = outer * (u + 1 - j) as f64 / j as f64;
        }
        if j > k {
            // k calls cannot hit more than k nodes
            out.push(0.0);
            continue;
        }
        let mut inner = 1.0f64;
        let mut largest = 0.0f64;
        let terms = (0..=j).map(|i| {
            if i > 0 {
                inner = inner * (j + 1 - i) as f64 / i as f64;
            }
            let miss = 1.0 - p * (u - j + i) as f64 / big_n;
            let t = inner * miss.max(0.0).powi(k as i32);
            let t = if i % 2 == 0 { t } else { -t };
            largest = largest.max(t.abs());
            t
        });
        let sum = neumaier_sum(terms.collect::<Vec<_>>());
        let value = outer * sum;
        if largest > 0.0 {
            let lost = if sum == 0.0 {
                f64::INFINITY
            } else {
                (largest / sum.abs()).log10()
            };
            if lost > MAX_LOST_DIGITS {
                return Err(OracleError::NumericInstability {
                    n,
                    k,
                    j,
                    lost_digits: lost,
                });
            }
        }
        out.push(value);
    }
    Ok(out)
}

fn rational(x: f64) -> Result<BigRational> {
    BigRational::from_float(x)
        .ok_or_else(|| OracleError::InvalidInput(format!("{x} is not finite")))
}

fn push_hits_rational(n: usize, k: usize, p: f64, big_n: f64) -> Result<Vec<f64>> {
    let u = n - k;
    let p = rational(p)?;
    let big_n = BigRational::from_integer(BigInt::from(big_n as u64));
    let binom = |a: usize, b: usize| -> BigInt {
        (0..b).fold(BigInt::one(), |acc, i| {
            acc * BigInt::from(a - i) / BigInt::from(i + 1)
        })
    };
    let mut out = Vec::with_capacity(u + 1);
    for j in 0..=u {
        let mut sum = BigRational::zero();
        for i in (0..=j).filter(|_| j <= k) {
            let hit = BigRational::from_integer(BigInt::from(u - j + i));
            let miss = BigRational::one() - &p * hit / &big_n;
            let term = BigRational::from_integer(binom(j, i)) * num_traits::pow(miss, k);
            if i % 2 == 0 {
                sum += term;
            } else {
                sum -= term;
            }
        }
        let value = BigRational::from_integer(binom(u, j)) * sum;
        out.push(value.to_f64().unwrap_or(f64::NAN));
    }
    Ok(out)
}

/// Calls one at a time: a call hits a fresh uninformed node with probability
/// p (u - h)/N when h are already hit. All terms are positive.
fn push_hits_occupancy(n: usize, k: usize, p: f64, big_n: f64) -> Vec<f64> {
    let u = n - k;
    let mut dist = vec![0.0; u + 1];
    dist[0] = 1.0;
    for _ in 0..k {
        for h in (0..=u).rev() {
            let fresh = p * (u - h) as f64 / big_n;
            let stay = dist[h] * (1.0 - fresh);
            let from_below = if h > 0 {
                dist[h - 1] * p * (u - h + 1) as f64 / big_n
            } else {
                0.0
            };
            dist[h] = stay + from_below;
        }
    }
    dist
}

/// Push-pull: push hits h nodes, then each of the other u - h uninformed nodes
/// pulls successfully with probability p k / n on its own.
pub fn transition_push_pull(
    n: usize,
    k: usize,
    success_prob: f64,
) -> Result<TransitionDistribution> {
    push_pull_law(n, k, success_prob, true)
}

fn push_pull_law(n: usize, k: usize, p: f64, include_self: bool) -> Result<TransitionDistribution> {
    check(n, k, p)?;
    let u = n - k;
    let hits = push_hits(n, k, p, include_self, Arithmetic::Auto)?;
    let q = p * k as f64 / pool(n, include_self);
    let mut probs = vec![0.0; u + 1];
    for (h, ph) in hits.iter().enumerate() {
        if *ph == 0.0 {
            continue;
        }
        for (extra, pe) in binomial_pmf(u - h, q).into_iter().enumerate() {
            probs[h + extra] += ph * pe;
        }
    }
    TransitionDistribution::from_raw(n, k, probs)
}

/// Exact round law of `spec` when one is known, honoring `include_self`.
pub fn transition(spec: &ProtocolSpec, n: usize, k: usize) -> Result<TransitionDistribution> {
    let p = spec.success_prob;
    let own = spec.include_self;
    match spec.kind {
        ProtocolKind::Push => push_law(n, k, p, own, Arithmetic::Auto),
        ProtocolKind::Pull => pull_law(n, k, p, own),
        ProtocolKind::PushPull => push_pull_law(n, k, p, own),
        other => Err(OracleError::Unsupported(format!(
            "{other} has no exchangeable closed-form round law"
        ))),
    }
}

/// All rows k = 1..n-1 of the informed-count chain.
pub fn transition_rows(
    n: usize,
    transition_fn: impl Fn(usize) -> Result<TransitionDistribution>,
) -> Result<Vec<TransitionDistribution>> {
    if n < 2 || n > MAX_ORACLE_N {
        return Err(OracleError::Unsupported(format!(
            "n = {n} outside 2..={MAX_ORACLE_N}"
        )));
    }
    (1..n)
        .map(|k| {
            let row = transition_fn(k)?;
            if row.n != n || row.k != k {
                return Err(OracleError::InvalidInput(format!(
                    "row for k = {k} describes n = {}, k = {}",
                    row.n, row.k
                )));
            }
            if row.stay() >= 1.0 {
                return Err(OracleError::AbsorbingTrap { k });
            }
            Ok(row)
        })
        .collect()
}

/// E[T(1, n)] by backward substitution on the informed count.
pub fn exact_expected_time(
    transition_fn: impl Fn(usize) -> Result<TransitionDistribution>,
    n: usize,
) -> Result<f64> {
    let rows = transition_rows(n, transition_fn)?;
    Ok(expected_times(&rows)[1])
}

/// E[T | k informed] for k = 0..=n (entries 0 and n are 0).
pub fn expected_times(rows: &[TransitionDistribution]) -> Vec<f64> {
    let n = rows.len() + 1;
    let mut expect = vec![0.0; n + 1];
    for k in (1..n).rev() {
        let row = &rows[k - 1];
        let onward = neumaier_sum(
            row.probs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(j, p)| p * expect[k + j]),
        );
        expect[k] = (1.0 + onward) / (1.0 - row.stay());
    }
    expect
}

/// Pr[T(1, n) = t] for t = 0..=cap, by pushing the informed-count law forward.
pub fn exact_time_distribution(
    transition_fn: impl Fn(usize) -> Result<TransitionDistribution>,
    n: usize,
    cap: usize,
) -> Result<Vec<f64>> {
    let rows = transition_rows(n, transition_fn)?;
    let mut law = vec![0.0; n + 1];
    law[1] = 1.0;
    let mut out = vec![0.0; cap + 1];
    for slot in out.iter_mut().skip(1) {
        let mut next = vec![0.0; n + 1];
        for k in 1..n {
            if law[k] == 0.0 {
                continue;
            }
            for (j, p) in rows[k - 1].probs.iter().enumerate() {
                next[k + j] += law[k] * p;
            }
        }
        *slot = next[n];
        next[n] = 0.0;
        law = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_small_terms() {
        let s = neumaier_sum([1.0, 1e100, 1.0, -1e100]);
        assert_eq!(s, 2.0);
    }

    #[test]
    fn occupancy_agrees_with_inclusion_exclusion() {
        for n in 2..=20 {
            for k in 1..n {
                let a = push_hits(n, k, 0.7, true, Arithmetic::Auto).unwrap();
                let b = push_hits_occupancy(n, k, 0.7, n as f64);
                for (x, y) in a.iter().zip(&b) {
                    assert!((x - y).abs() < 1e-12, "n={n} k={k}");
                }
            }
        }
    }
}
