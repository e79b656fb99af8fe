//! Batches of trials written as CSV rows plus a JSON summary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gossipsim_core::analytic::predict;
use gossipsim_core::engine::run_batch;
use gossipsim_core::stats::{fit_tail, summarize, MeanEstimate, TailFit};
use gossipsim_core::{derive_trial_seed, TrialResult};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;

pub const TRIALS_FILE: &str = "trials.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Root seed of the batch at size `n`; keyed by n so adding sizes leaves other batches alone.
pub fn batch_seed(root_seed: u64, n: usize) -> u64 {
    derive_trial_seed(root_seed, n as u64)
}

#[derive(Debug, Serialize)]
struct TrialRow<'a> {
    protocol: &'a str,
    n: usize,
    trial: u64,
    seed: u64,
    #[serde(rename = "T")]
    time: u64,
    calls: u64,
    transmissions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub n: usize,
    pub trials: u64,
    pub estimate: MeanEstimate,
    pub confidence: f64,
    /// Leading-order prediction, absent when the protocol has none.
    pub prediction: Option<f64>,
    pub gap: Option<f64>,
    pub tail_fit: Option<TailFit>,
    /// Why no tail fit was possible.
    pub tail_note: Option<String>,
    pub calls_per_node: f64,
    pub transmissions_per_node: f64,
    pub distribution: Vec<(u64, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub protocol: String,
    pub config: ExperimentConfig,
    pub sizes: Vec<SizeSummary>,
}

pub struct SimulationRun {
    pub summary: SimulationSummary,
    pub results: Vec<(usize, Vec<TrialResult>)>,
}

pub fn run(config: &ExperimentConfig) -> Result<SimulationRun> {
    config.validate()?;
    let label = config.protocol.label();
    let mut results = Vec::new();
    let mut sizes = Vec::new();
    for n in config.sizes() {
        log::info!("{label}: n = {n}, {} trials", config.trials);
        let batch = run_batch(
            &config.protocol,
            n,
            config.trials,
            batch_seed(config.root_seed, n),
            config.policy.resolve(n),
            config.parallelism,
        )
        .with_context(|| format!("n = {n}"))?;
        sizes.push(summarize_size(config, n, &batch)?);
        results.push((n, batch));
    }
    Ok(SimulationRun {
        summary: SimulationSummary {
            protocol: label,
            config: config.clone(),
            sizes,
        },
        results,
    })
}

fn summarize_size(
    config: &ExperimentConfig,
    n: usize,
    batch: &[TrialResult],
) -> Result<SizeSummary> {
    let times: Vec<u64> = batch.iter().map(|r| r.spreading_time).collect();
    let values: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    let confidence = config.thresholds.confidence;
    let estimate = MeanEstimate::with_confidence(&values, confidence)?;
    let prediction = predict(&config.protocol, n).ok().map(|p| p.value);
    let (tail_fit, tail_note) = match fit_tail(&times, config.thresholds.tail_offsets) {
        Ok(fit) => (Some(fit), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let m = batch.len() as f64 * n as f64;
    Ok(SizeSummary {
        n,
        trials: batch.len() as u64,
        estimate,
        confidence,
        prediction,
        gap: prediction.map(|p| estimate.mean - p),
        tail_fit,
        tail_note,
        calls_per_node: batch.iter().map(|r| r.calls_placed as f64).sum::<f64>() / m,
        transmissions_per_node: batch
            .iter()
            .map(|r| r.rumor_transmissions as f64)
            .sum::<f64>()
            / m,
        distribution: summarize(&times)?.distribution,
    })
}

/// Trial rows ordered by (n, trial index).
pub fn write_csv<W: Write>(
    out: W,
    protocol: &str,
    results: &[(usize, Vec<TrialResult>)],
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for (n, batch) in results {
        for (i, r) in batch.iter().enumerate() {
            w.serialize(TrialRow {
                protocol,
                n: *n,
                trial: i as u64,
                seed: r.seed,
                time: r.spreading_time,
                calls: r.calls_placed,
                transmissions: r.rumor_transmissions,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(run: &SimulationRun, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join(TRIALS_FILE);
    let file = fs::File::create(&csv_path).with_context(|| format!("{}", csv_path.display()))?;
    write_csv(
        std::io::BufWriter::new(file),
        &run.summary.protocol,
        &run.results,
    )?;
    let json_path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&run.summary)?;
    fs::write(&json_path, json + "\n").with_context(|| format!("{}", json_path.display()))?;
    Ok((csv_path, json_path))
}
