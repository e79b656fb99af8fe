//! Prediction, exact-chain and sweep commands.

use std::io::Write;

use anyhow::{bail, Result};
use gossipsim_core::analytic::predict;
use gossipsim_core::engine::default_round_cap;
use gossipsim_core::oracle::{
    exact_expected_time, exact_time_distribution, transition, MAX_ORACLE_N,
};
use gossipsim_core::stats::{GapRecord, GapSeries};
use gossipsim_core::{Prediction, ProtocolSpec, ShrinkTerm};
use serde::Serialize;

use crate::simulate::SimulationSummary;

pub fn describe_prediction(spec: &ProtocolSpec, n: usize, p: &Prediction) -> String {
    let ln_n = (n as f64).ln();
    let growth = ln_n / p.growth_base.ln();
    let shrink = p.value - growth;
    let shrink_text = match p.shrink {
        ShrinkTerm::Coefficient(c) => format!("{c:.6} ln n = {shrink:.6}"),
        ShrinkTerm::LogLogBase(b) => format!("log_{b:.6} ln n = {shrink:.6}"),
    };
    format!(
        "{} n={n}: {:.4}\n  log_{:.6} n = {growth:.6}\n  {shrink_text}",
        spec.label(),
        p.value,
        p.growth_base
    )
}

pub fn cmd_predict(spec: &ProtocolSpec, n: usize) -> Result<Prediction> {
    Ok(predict(spec, n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutput {
    pub expected_time: f64,
    /// Pr[T = t] for t = 0.. up to where the remaining mass is negligible.
    pub distribution: Vec<f64>,
}

/// Remaining probability mass below which the time law is truncated.
const TAIL_MASS: f64 = 1e-15;

pub fn cmd_oracle(spec: &ProtocolSpec, n: usize) -> Result<OracleOutput> {
    if n > MAX_ORACLE_N {
        bail!("unsupported: exact chains are limited to n <= {MAX_ORACLE_N}, got {n}");
    }
    let row = |k| transition(spec, n, k);
    let expected_time = exact_expected_time(row, n)?;
    let mut distribution = exact_time_distribution(row, n, default_round_cap(n) as usize)?;
    let mut mass = 0.0;
    let cut = distribution
        .iter()
        .position(|p| {
            mass += p;
            1.0 - mass < TAIL_MASS
        })
        .map_or(distribution.len(), |i| i + 1);
    distribution.truncate(cut);
    Ok(OracleOutput {
        expected_time,
        distribution,
    })
}

pub fn write_time_law<W: Write>(out: W, law: &[f64]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["T", "probability"])?;
    for (t, p) in law.iter().enumerate() {
        w.write_record([t.to_string(), format!("{p:.17e}")])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SweepRow {
    protocol: String,
    n: usize,
    trials: u64,
    mean: f64,
    ci_halfwidth: f64,
    prediction: Option<f64>,
    gap: Option<f64>,
    calls_per_node: f64,
    transmissions_per_node: f64,
    tail_slope: Option<f64>,
    tail_r_squared: Option<f64>,
}

/// One row per size.
pub fn write_sweep<W: Write>(out: W, summary: &SimulationSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for s in &summary.sizes {
        w.serialize(SweepRow {
            protocol: summary.protocol.clone(),
            n: s.n,
            trials: s.trials,
            mean: s.estimate.mean,
            ci_halfwidth: s.estimate.ci_halfwidth,
            prediction: s.prediction,
            gap: s.gap,
            calls_per_node: s.calls_per_node,
            transmissions_per_node: s.transmissions_per_node,
            tail_slope: s.tail_fit.as_ref().map(|f| f.slope),
            tail_r_squared: s.tail_fit.as_ref().map(|f| f.r_squared),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Gap series of a sweep, when the protocol has a prediction.
pub fn sweep_gaps(summary: &SimulationSummary) -> Option<GapSeries> {
    let records = summary
        .sizes
        .iter()
        .map(|s| {
            Some(GapRecord {
                n: s.n,
                empirical_mean: s.estimate.mean,
                prediction: s.prediction?,
                gap: s.gap?,
                ci_halfwidth: s.estimate.ci_halfwidth,
            })
        })
        .collect::<Option<Vec<_>>>()?;
    Some(GapSeries {
        label: summary.protocol.clone(),
        records,
    })
}
