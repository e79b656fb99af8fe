//! Command line surface.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gossipsim_core::model::NEVER;
use gossipsim_core::{validate_spec, CallDistribution, ProtocolKind, ProtocolSpec};

use crate::commands::{self, cmd_oracle, cmd_predict, describe_prediction, write_time_law};
use crate::config::{self, ExperimentConfig, PolicyConfig, Thresholds};
use crate::simulate::{self, SimulationRun};
use crate::verify::{self, Status, VerifyOptions};

const DEFAULT_OUT: &str = "gossipsim-results";

#[derive(Debug, Parser)]
#[command(
    name = "gossipsim",
    version,
    about = "Rumor spreading on complete graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run trials and write trials.csv and summary.json.
    Simulate(RunArgs),
    /// Run trials over several sizes and also write a per-size sweep.csv.
    Sweep(RunArgs),
    /// Print the leading-order spreading time.
    Predict(PredictArgs),
    /// Exact expected spreading time and time law from the Markov chain.
    Oracle(OracleArgs),
    /// Reduced-size self check with one verdict per check.
    Verify(VerifyArgs),
    /// Print the JSON schema of experiment configs.
    Schema,
}

#[derive(Debug, Clone, Args)]
pub struct ProtocolArgs {
    /// push, pull, push-pull, dynamic-gnp-push, r-push, r-push-pull,
    /// single-call-pull, single-call-push-pull or transition-time-push-pull.
    #[arg(long, value_parser = parse_kind)]
    pub protocol: Option<ProtocolKind>,
    /// Calls succeed with this probability and fail otherwise.
    #[arg(long = "fail", visible_alias = "success-prob", value_name = "P")]
    pub success_prob: Option<f64>,
    /// Expected degree a of the per-round random graph (edge probability a/n).
    #[arg(long, value_name = "A")]
    pub edge_density: Option<f64>,
    /// Calls per node and round: "0.3,0.4,0.3", "uniform:0..2" or "const:2".
    #[arg(long, value_name = "SPEC")]
    pub r_dist: Option<String>,
    /// Round after which the transition-time protocol switches; "never" disables it.
    #[arg(long, value_name = "T")]
    pub transition_time: Option<String>,
    /// Draw call targets among the other nodes only.
    #[arg(long)]
    pub exclude_self: bool,
}

impl ProtocolArgs {
    fn any_set(&self) -> bool {
        self.protocol.is_some()
            || self.success_prob.is_some()
            || self.edge_density.is_some()
            || self.r_dist.is_some()
            || self.transition_time.is_some()
            || self.exclude_self
    }

    pub fn build(&self) -> Result<ProtocolSpec> {
        let kind = self
            .protocol
            .ok_or_else(|| anyhow!("--protocol is required"))?;
        let calls = self
            .r_dist
            .as_deref()
            .map(CallDistribution::parse)
            .transpose()?;
        let transition = self
            .transition_time
            .as_deref()
            .map(parse_transition_time)
            .transpose()?;
        let mut spec = match kind {
            ProtocolKind::Push => ProtocolSpec::push(),
            ProtocolKind::Pull => ProtocolSpec::pull(),
            ProtocolKind::PushPull => ProtocolSpec::push_pull(),
            ProtocolKind::DynamicGnpPush => ProtocolSpec::dynamic_gnp_push(
                self.edge_density
                    .ok_or_else(|| anyhow!("{kind} needs --edge-density"))?,
            ),
            ProtocolKind::RPush | ProtocolKind::RPushPull => {
                let calls = calls
                    .clone()
                    .ok_or_else(|| anyhow!("{kind} needs --r-dist"))?;
                if kind == ProtocolKind::RPush {
                    ProtocolSpec::r_push(calls)
                } else {
                    ProtocolSpec::r_push_pull(calls)
                }
            }
            ProtocolKind::SingleCallPull => ProtocolSpec::single_call_pull(),
            ProtocolKind::SingleCallPushPull => ProtocolSpec::single_call_push_pull(),
            ProtocolKind::TransitionTimePushPull => {
                ProtocolSpec::transition_time_push_pull(transition)
            }
        };
        // parameters the protocol does not take are rejected by validation
        if kind != ProtocolKind::DynamicGnpPush {
            spec.edge_density = self.edge_density;
        }
        if !matches!(kind, ProtocolKind::RPush | ProtocolKind::RPushPull) {
            spec.call_distribution = calls;
        }
        if kind != ProtocolKind::TransitionTimePushPull {
            spec.transition_time = transition;
        }
        if let Some(p) = self.success_prob {
            spec.success_prob = p;
        }
        spec.include_self = !self.exclude_self;
        validate_spec(spec).map_err(|errs| {
            anyhow!(errs
                .iter()
                .map(|e| e.to_string())
                .collect::<Vec<_>>()
                .join("; "))
        })
    }
}

fn parse_kind(s: &str) -> Result<ProtocolKind, String> {
    s.parse()
        .map_err(|e: gossipsim_core::SpecError| e.to_string())
}

fn parse_transition_time(s: &str) -> Result<u64> {
    match s.trim() {
        "never" | "inf" => Ok(NEVER),
        t => t.parse().with_context(|| format!("transition time `{t}`")),
    }
}

/// Parses one size, either plain or as `2^k`.
fn parse_size(s: &str) -> Result<usize, String> {
    let s = s.trim();
    match s.strip_prefix("2^") {
        Some(e) => e
            .parse::<u32>()
            .ok()
            .and_then(|e| 1usize.checked_shl(e))
            .ok_or_else(|| format!("bad size `{s}`")),
        None => s.parse().map_err(|_| format!("bad size `{s}`")),
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    /// Number of nodes (2^k accepted).
    #[arg(long, value_parser = parse_size)]
    pub n: Option<usize>,
    /// Comma-separated sizes (2^k accepted).
    #[arg(long, value_delimiter = ',', value_parser = parse_size)]
    pub n_list: Option<Vec<usize>>,
    #[arg(long)]
    pub trials: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Informed nodes stop sending after this many rounds; "auto" picks the
    /// push-pull limit ceil(log3 n) + 3 ceil(log2 ln n).
    #[arg(long, value_name = "ROUNDS|auto")]
    pub age_limit: Option<String>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = "GOSSIPSIM_THREADS")]
    pub parallelism: Option<usize>,
    /// JSON experiment config; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl RunArgs {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig {
                protocol: self.protocol.build()?,
                n_list: Vec::new(),
                trials: 100,
                root_seed: 0,
                policy: PolicyConfig::default(),
                output: None,
                parallelism: None,
                thresholds: Thresholds::default(),
            },
        };
        if self.config.is_some() && self.protocol.any_set() {
            config.protocol = self.protocol.build()?;
        }
        if let Some(ns) = &self.n_list {
            config.n_list = ns.clone();
        }
        if let Some(n) = self.n {
            config.n_list = vec![n];
        }
        if config.n_list.is_empty() {
            bail!("give --n or --n-list");
        }
        if let Some(t) = self.trials {
            config.trials = t;
        }
        if let Some(s) = self.seed {
            config.root_seed = s;
        }
        if let Some(limit) = &self.age_limit {
            config.policy = match limit.trim() {
                "auto" => PolicyConfig::AutoAgeLimit,
                l => PolicyConfig::AgeLimit(l.parse().with_context(|| format!("age limit `{l}`"))?),
            };
        }
        if let Some(out) = &self.out {
            config.output = Some(out.clone());
        }
        if let Some(p) = self.parallelism {
            config.parallelism = Some(p);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, value_parser = parse_size)]
    pub n: usize,
    /// Print the prediction as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub protocol: ProtocolArgs,
    #[arg(long, value_parser = parse_size)]
    pub n: usize,
    /// Write the exact law of T as CSV here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, env = "GOSSIPSIM_THREADS")]
    pub parallelism: Option<usize>,
    /// Config whose thresholds are used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace every growth rate by this value (negative control).
    #[arg(long, value_name = "GAMMA")]
    pub inject_gamma: Option<f64>,
    #[arg(long)]
    pub oracle_trials: Option<u64>,
    #[arg(long)]
    pub gap_trials: Option<u64>,
    #[arg(long)]
    pub tail_trials: Option<u64>,
    #[arg(long)]
    pub covariance_replays: Option<u64>,
    /// Also write the report as JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl VerifyArgs {
    pub fn options(&self) -> Result<VerifyOptions> {
        let mut opts = VerifyOptions {
            root_seed: self.seed,
            parallelism: self.parallelism,
            inject_gamma: self.inject_gamma,
            ..VerifyOptions::default()
        };
        if let Some(path) = &self.config {
            opts.thresholds = ExperimentConfig::load(path)?.thresholds;
        }
        if let Some(t) = self.oracle_trials {
            opts.oracle_trials = t;
        }
        if let Some(t) = self.gap_trials {
            opts.gap_trials = t;
        }
        if let Some(t) = self.tail_trials {
            opts.tail_trials = t;
        }
        if let Some(r) = self.covariance_replays {
            opts.covariance_replays = r;
        }
        Ok(opts)
    }
}

fn output_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output
        .clone()
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn simulate_to_disk(config: &ExperimentConfig) -> Result<(SimulationRun, PathBuf)> {
    let run = simulate::run(config)?;
    let dir = output_dir(config);
    let (csv, json) = simulate::write_outputs(&run, &dir)?;
    eprintln!("wrote {} and {}", csv.display(), json.display());
    Ok((run, dir))
}

fn print_sizes(run: &SimulationRun) {
    for s in &run.summary.sizes {
        let pred = s.prediction.map_or("-".to_string(), |p| format!("{p:.3}"));
        println!(
            "{} n={}: mean {:.3} ± {:.3}, prediction {pred}",
            run.summary.protocol, s.n, s.estimate.mean, s.estimate.ci_halfwidth
        );
    }
}

fn write_file(path: &Path, f: impl FnOnce(fs::File) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let file = fs::File::create(path).with_context(|| format!("{}", path.display()))?;
    f(file)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Simulate(args) => {
            let config = args.experiment()?;
            let (run, _) = simulate_to_disk(&config)?;
            print_sizes(&run);
        }
        Command::Sweep(args) => {
            let config = args.experiment()?;
            let (run, dir) = simulate_to_disk(&config)?;
            let path = dir.join("sweep.csv");
            write_file(&path, |f| commands::write_sweep(f, &run.summary))?;
            eprintln!("wrote {}", path.display());
            print_sizes(&run);
            if let Some(series) = commands::sweep_gaps(&run.summary) {
                for s in series.steps(config.thresholds.gap_stability) {
                    println!(
                        "gap {} -> {}: {:+.3} (allowed {:.3}) {}",
                        s.n,
                        s.next_n,
                        s.change,
                        s.allowed,
                        if s.holds() { "stable" } else { "UNSTABLE" }
                    );
                }
            }
        }
        Command::Predict(args) => {
            let spec = args.protocol.build()?;
            let p = cmd_predict(&spec, args.n)?;
            if args.json {
                println!("{}", serde_json::to_string(&p)?);
            } else {
                println!("{}", describe_prediction(&spec, args.n, &p));
            }
        }
        Command::Oracle(args) => {
            let spec = args.protocol.build()?;
            let out = cmd_oracle(&spec, args.n)?;
            println!(
                "{} n={}: E[T] = {}",
                spec.label(),
                args.n,
                out.expected_time
            );
            if let Some(path) = &args.out {
                write_file(path, |f| write_time_law(f, &out.distribution))?;
                eprintln!("wrote {}", path.display());
            }
        }
        Command::Verify(args) => {
            let report = verify::run(&args.options()?);
            let mut stdout = io::stdout().lock();
            for v in &report.verdicts {
                writeln!(stdout, "{}", serde_json::to_string(v)?)?;
            }
            writeln!(stdout, "{}", serde_json::json!({ "suite": report.status }))?;
            if let Some(path) = &args.out {
                write_file(path, |f| Ok(serde_json::to_writer_pretty(f, &report)?))?;
            }
            return Ok(match report.status {
                Status::Pass => ExitCode::SUCCESS,
                Status::Fail => ExitCode::from(1),
                Status::Partial => ExitCode::from(3),
            });
        }
        Command::Schema => {
            println!("{}", serde_json::to_string_pretty(&config::schema())?);
        }
    }
    Ok(ExitCode::SUCCESS)
}
