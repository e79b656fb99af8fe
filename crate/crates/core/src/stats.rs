//! Estimators that turn batches of trials into checkable numbers.

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::analytic::{predict, AnalyticError};
use crate::engine::{resolve_parallelism, run_batch_map, EngineError, StoppingPolicy, TrialRng};
use crate::model::{derive_trial_seed, ProtocolSpec, SimState, TrialResult};
use crate::protocols::{step, RoundScratch};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("only {usable} tail offsets have enough exceedances, need 3")]
    InsufficientTail { usable: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
}

type Result<T> = std::result::Result<T, StatsError>;

/// Default two-sided confidence level of every interval reported here.
pub const CONFIDENCE: f64 = 0.95;

/// Mean with a Student-t confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanEstimate {
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci_halfwidth: f64,
}

impl MeanEstimate {
    pub fn from_samples(values: &[f64]) -> Result<Self> {
        Self::with_confidence(values, CONFIDENCE)
    }

    pub fn with_confidence(values: &[f64], confidence: f64) -> Result<Self> {
        let count = values.len();
        if count == 0 {
            return Err(StatsError::EmptyBatch);
        }
        if !(confidence > 0.0 && confidence < 1.0) {
            return Err(StatsError::InvalidInput(format!("confidence {confidence}")));
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        if count == 1 {
            return Ok(Self {
                count,
                mean,
                variance: 0.0,
                std_error: f64::INFINITY,
                ci_halfwidth: f64::INFINITY,
            });
        }
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64;
        let std_error = (variance / count as f64).sqrt();
        let t = StudentsT::new(0.0, 1.0, (count - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.5 + confidence / 2.0);
        Ok(Self {
            count,
            mean,
            variance,
            std_error,
            ci_halfwidth: t * std_error,
        })
    }
}

/// Summary of a batch of spreading times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub estimate: MeanEstimate,
    /// (T, number of trials with that T), sorted by T.
    pub distribution: Vec<(u64, u64)>,
}

impl Summary {
    pub fn mean(&self) -> f64 {
        self.estimate.mean
    }
}

pub fn summarize(times: &[u64]) -> Result<Summary> {
    let values: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    let estimate = MeanEstimate::from_samples(&values)?;
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    let distribution = sorted
        .chunk_by(|a, b| a == b)
        .map(|run| (run[0], run.len() as u64))
        .collect();
    Ok(Summary {
        estimate,
        distribution,
    })
}

pub fn summarize_trials(results: &[TrialResult]) -> Result<Summary> {
    let times: Vec<u64> = results.iter().map(|r| r.spreading_time).collect();
    summarize(&times)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapRecord {
    pub n: usize,
    pub empirical_mean: f64,
    pub prediction: f64,
    pub gap: f64,
    pub ci_halfwidth: f64,
}

/// Empirical mean minus the leading-order prediction, per n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSeries {
    pub label: String,
    pub records: Vec<GapRecord>,
}

/// One comparison of consecutive gaps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStep {
    pub n: usize,
    pub next_n: usize,
    pub change: f64,
    /// Threshold plus the combined confidence half-width of both gaps.
    pub allowed: f64,
}

impl GapStep {
    pub fn holds(&self) -> bool {
        self.change.abs() <= self.allowed
    }
}

impl GapSeries {
    /// Changes between consecutive records.
    pub fn steps(&self, threshold: f64) -> Vec<GapStep> {
        self.records
            .windows(2)
            .map(|w| GapStep {
                n: w[0].n,
                next_n: w[1].n,
                change: w[1].gap - w[0].gap,
                allowed: threshold + w[0].ci_halfwidth.hypot(w[1].ci_halfwidth),
            })
            .collect()
    }

    pub fn is_stable(&self, threshold: f64) -> bool {
        self.steps(threshold).iter().all(GapStep::holds)
    }

    /// True when every gap lies in [lo, hi] up to its confidence half-width.
    pub fn within(&self, lo: f64, hi: f64) -> bool {
        self.records
            .iter()
            .all(|r| r.gap + r.ci_halfwidth >= lo && r.gap - r.ci_halfwidth <= hi)
    }
}

/// Runs a batch per n and subtracts the prediction. Batch at n_list[i] uses
/// root seed `derive_trial_seed(root_seed, i)`.
pub fn gap_series(
    spec: &ProtocolSpec,
    n_list: &[usize],
    trials: u64,
    root_seed: u64,
    parallelism: Option<usize>,
) -> Result<GapSeries> {
    let mut ns = n_list.to_vec();
    ns.sort_unstable();
    let records = ns
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let prediction = predict(spec, n)?.value;
            let times = run_batch_map(
                spec,
                n,
                trials,
                derive_trial_seed(root_seed, i as u64),
                StoppingPolicy::UntilAllInformed,
                parallelism,
                |r| r.spreading_time as f64,
            )?;
            let est = MeanEstimate::from_samples(&times)?;
            Ok(GapRecord {
                n,
                empirical_mean: est.mean,
                prediction,
                gap: est.mean - prediction,
                ci_halfwidth: est.ci_halfwidth,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GapSeries {
        label: spec.label(),
        records,
    })
}

/// Ordinary least squares line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub sse: f64,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(StatsError::InvalidInput(
            "need two or more paired points".into(),
        ));
    }
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(StatsError::InvalidInput("all x values equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        sse,
    })
}

/// Least squares y = slope * x through the origin.
pub fn fit_through_origin(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(StatsError::InvalidInput("need paired points".into()));
    }
    let sxx: f64 = xs.iter().map(|x| x * x).sum();
    if sxx == 0.0 {
        return Err(StatsError::InvalidInput("all x values zero".into()));
    }
    let slope = xs.iter().zip(ys).map(|(x, y)| x * y).sum::<f64>() / sxx;
    let sse: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x).powi(2))
        .sum();
    let syy: f64 = ys.iter().map(|y| y * y).sum();
    Ok(LineFit {
        slope,
        intercept: 0.0,
        r_squared: if syy == 0.0 { 1.0 } else { 1.0 - sse / syy },
        sse,
    })
}

/// Minimum exceedances an offset needs to enter the tail fit.
pub const MIN_EXCEEDANCES: usize = 30;

/// Straight line through log Pr[T >= round(mean) + r].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub base: u64,
    pub offsets: Vec<u64>,
    pub log_survival: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_tail(times: &[u64], r_max: u64) -> Result<TailFit> {
    if times.is_empty() {
        return Err(StatsError::EmptyBatch);
    }
    let total = times.len() as f64;
    let mean = times.iter().map(|&t| t as f64).sum::<f64>() / total;
    let base = mean.round() as u64;
    let mut sorted = times.to_vec();
    sorted.sort_unstable();
    let (offsets, log_survival): (Vec<u64>, Vec<f64>) = (1..=r_max)
        .filter_map(|r| {
            let at_least = sorted.len() - sorted.partition_point(|&t| t < base + r);
            (at_least >= MIN_EXCEEDANCES).then(|| (r, (at_least as f64 / total).ln()))
        })
        .unzip();
    if offsets.len() < 3 {
        return Err(StatsError::InsufficientTail {
            usable: offsets.len(),
        });
    }
    let xs: Vec<f64> = offsets.iter().map(|&r| r as f64).collect();
    let line = fit_line(&xs, &log_survival)?;
    Ok(TailFit {
        base,
        offsets,
        log_survival,
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
    })
}

/// Sample covariance of two indicators with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub replays: u64,
    pub p_first: f64,
    pub p_second: f64,
    pub p_both: f64,
    pub covariance: f64,
    pub std_error: f64,
}

/// Counts (first, second, both) of a batch of indicator pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PairCounts {
    pub replays: u64,
    pub first: u64,
    pub second: u64,
    pub both: u64,
}

impl PairCounts {
    pub fn add(&mut self, a: bool, b: bool) {
        self.replays += 1;
        self.first += a as u64;
        self.second += b as u64;
        self.both += (a && b) as u64;
    }

    fn merge(self, o: Self) -> Self {
        Self {
            replays: self.replays + o.replays,
            first: self.first + o.first,
            second: self.second + o.second,
            both: self.both + o.both,
        }
    }

    /// Covariance estimate; the standard error comes from the per-replay
    /// products (X - p1)(Y - p2), whose four values are determined by the counts.
    pub fn estimate(&self) -> Result<CovarianceEstimate> {
        if self.replays < 2 {
            return Err(StatsError::EmptyBatch);
        }
        let m = self.replays as f64;
        let (p1, p2, p12) = (
            self.first as f64 / m,
            self.second as f64 / m,
            self.both as f64 / m,
        );
        let covariance = (p12 - p1 * p2) * m / (m - 1.0);
        let cells = [
            (p12, (1.0 - p1) * (1.0 - p2)),
            (p1 - p12, (1.0 - p1) * (-p2)),
            (p2 - p12, (-p1) * (1.0 - p2)),
            (1.0 - p1 - p2 + p12, p1 * p2),
        ];
        let mean_z = p12 - p1 * p2;
        let var_z: f64 = cells
            .iter()
            .map(|(w, z)| w * (z - mean_z).powi(2))
            .sum::<f64>()
            * m
            / (m - 1.0);
        Ok(CovarianceEstimate {
            replays: self.replays,
            p_first: p1,
            p_second: p2,
            p_both: p12,
            covariance,
            std_error: (var_z / m).sqrt(),
        })
    }
}

const REPLAY_CHUNK: u64 = 8192;

/// Replays one round from a fixed state with k informed nodes and tracks
/// whether the two last (uninformed) nodes learn the rumor.
pub fn estimate_pairwise_covariance(
    spec: &ProtocolSpec,
    n: usize,
    k: usize,
    replays: u64,
    root_seed: u64,
    parallelism: Option<usize>,
) -> Result<CovarianceEstimate> {
    if n < 3 || k == 0 || k + 2 > n {
        return Err(StatsError::InvalidInput(format!(
            "need two uninformed nodes, got n = {n}, k = {k}"
        )));
    }
    crate::model::validate_spec(spec.clone())
        .map_err(|e| StatsError::Engine(EngineError::InvalidSpec(e)))?;
    let start = SimState::with_first_informed(n, k);
    let (a, b) = (n - 1, n - 2);
    let chunks = replays.div_ceil(REPLAY_CHUNK);
    let chunk = |c: u64| {
        let mut rng = TrialRng::seed_from_u64(derive_trial_seed(root_seed, c));
        let mut scratch = RoundScratch::new(n);
        let mut seen = vec![false; n];
        let mut counts = PairCounts::default();
        let todo = REPLAY_CHUNK.min(replays - c * REPLAY_CHUNK);
        for _ in 0..todo {
            let out = step(spec, &start, true, &mut scratch, &mut rng);
            for &v in &out.newly_informed {
                seen[v as usize] = true;
            }
            counts.add(seen[a], seen[b]);
            for &v in &out.newly_informed {
                seen[v as usize] = false;
            }
        }
        counts
    };
    let threads = resolve_parallelism(parallelism);
    let total = if threads <= 1 {
        (0..chunks)
            .map(chunk)
            .fold(PairCounts::default(), PairCounts::merge)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| EngineError::Pool(e.to_string()))?;
        pool.install(|| {
            (0..chunks)
                .into_par_iter()
                .map(chunk)
                .reduce(PairCounts::default, PairCounts::merge)
        })
    };
    total.estimate()
}

/// Messages of a batch at one n.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub n: usize,
    pub transmissions_per_node: f64,
    pub calls_per_node: f64,
    pub mean_time: f64,
    /// Fraction of trials in which everyone was informed before the push phase
    /// ended (every trial for policies without an age limit).
    pub completed_in_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowthLaw {
    Log,
    LogLog,
}

/// Fits of per-node messages against ln n and ln ln n, each through the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthDiagnosis {
    pub log_fit: LineFit,
    pub loglog_fit: LineFit,
    pub better: GrowthLaw,
}

impl GrowthDiagnosis {
    pub fn fit(ns: &[usize], per_node: &[f64]) -> Result<Self> {
        let logs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let loglogs: Vec<f64> = logs.iter().map(|l| l.ln()).collect();
        let log_fit = fit_through_origin(&logs, per_node)?;
        let loglog_fit = fit_through_origin(&loglogs, per_node)?;
        let better = if loglog_fit.sse < log_fit.sse {
            GrowthLaw::LogLog
        } else {
            GrowthLaw::Log
        };
        Ok(Self {
            log_fit,
            loglog_fit,
            better,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageGrowth {
    pub records: Vec<MessageRecord>,
    pub transmissions: GrowthDiagnosis,
    pub calls: GrowthDiagnosis,
}

pub fn message_growth(
    spec: &ProtocolSpec,
    policy: impl Fn(usize) -> StoppingPolicy,
    n_list: &[usize],
    trials: u64,
    root_seed: u64,
    parallelism: Option<usize>,
) -> Result<MessageGrowth> {
    if n_list.len() < 2 {
        return Err(StatsError::InvalidInput("need at least two sizes".into()));
    }
    let records = n_list
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let policy = policy(n);
            let deadline = match policy {
                StoppingPolicy::AgeLimit(l) => l,
                _ => u64::MAX,
            };
            let rows = run_batch_map(
                spec,
                n,
                trials,
                derive_trial_seed(root_seed, i as u64),
                policy,
                parallelism,
                |r| (r.rumor_transmissions, r.calls_placed, r.spreading_time),
            )?;
            let m = rows.len() as f64;
            let nf = n as f64;
            Ok(MessageRecord {
                n,
                transmissions_per_node: rows.iter().map(|r| r.0 as f64).sum::<f64>() / m / nf,
                calls_per_node: rows.iter().map(|r| r.1 as f64).sum::<f64>() / m / nf,
                mean_time: rows.iter().map(|r| r.2 as f64).sum::<f64>() / m,
                completed_in_time: rows.iter().filter(|r| r.2 <= deadline).count() as f64 / m,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ns: Vec<usize> = records.iter().map(|r| r.n).collect();
    let tx: Vec<f64> = records.iter().map(|r| r.transmissions_per_node).collect();
    let calls: Vec<f64> = records.iter().map(|r| r.calls_per_node).collect();
    Ok(MessageGrowth {
        transmissions: GrowthDiagnosis::fit(&ns, &tx)?,
        calls: GrowthDiagnosis::fit(&ns, &calls)?,
        records,
    })
}
