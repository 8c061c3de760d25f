//! `stacktune` command-line front end: workload generation, oracle tensor
//! builds, experiment runs, reports and ablations.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stacktune::ablation::{ablate, write_ablation, AblationAxis};
use stacktune::baselines::StrategyKind;
use stacktune::control_plane::TopologyMode;
use stacktune::error::{Error, Result};
use stacktune::harness::{default_trace_source, read_metadata, read_results, run_experiment, ExperimentConfig, PopAssignment, WorkloadSource};
use stacktune::plt_oracle::{build_tensor, ConditionGrid};
use stacktune::report::{report, write_report};
use stacktune::workload::{generate_sessions, write_trace, WorkloadSpec};

#[derive(Parser)]
#[command(name = "stacktune", version, about = "Per-network-class web stack configuration tuning laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload and write it as a trace CSV.
    GenWorkload {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// WorkloadSpec JSON; the standard workload when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        sessions: Option<usize>,
        /// Also write the effective spec as JSON.
        #[arg(long)]
        write_spec: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Precompute noiseless PLT over a condition grid for every website and
    /// configuration.
    BuildOracle {
        #[arg(long, value_delimiter = ',', default_values_t = [1_000.0, 3_000.0, 10_000.0, 30_000.0, 100_000.0])]
        bandwidth: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [20.0, 60.0, 150.0, 400.0])]
        rtt: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.001, 0.01, 0.05])]
        loss: Vec<f64>,
        /// WorkloadSpec JSON supplying the website catalog.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run one strategy and write the results CSV with its sidecars.
    Run {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Summarize one or more results files.
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
        /// Directory for the CSV (and SVG) tables.
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        svg: bool,
        /// Bucket width; read from each file's metadata when omitted.
        #[arg(long)]
        update_interval: Option<u64>,
    },
    /// One run per feature or knob subset.
    Ablate {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        axis: AblationAxis,
        /// Repeatable; e.g. `--subset cc --subset none --subset rtt,loss`.
        #[arg(long = "subset", required = true)]
        subsets: Vec<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    /// Base ExperimentConfig JSON; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    algo: Option<StrategyKind>,
    #[arg(long)]
    seed: Option<u64>,
    /// Replay a trace CSV instead of the synthetic workload.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long)]
    update_interval: Option<u64>,
    #[arg(long)]
    topology: Option<TopologyMode>,
    #[arg(long)]
    delay: Option<u64>,
    #[arg(long)]
    pops: Option<usize>,
    /// Assign points of presence per client or per network class.
    #[arg(long)]
    pop_assignment: Option<String>,
    #[arg(long)]
    feature_mask: Option<String>,
    #[arg(long)]
    knob_mask: Option<String>,
    #[arg(long)]
    epsilon: Option<f64>,
}

impl ExperimentArgs {
    fn build(&self) -> Result<ExperimentConfig> {
        let seed = self.seed.unwrap_or(1);
        let mut cfg = match &self.config {
            Some(path) => serde_json::from_str(&fs::read_to_string(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?,
            None => ExperimentConfig::standard(StrategyKind::ConfigTron, seed),
        };
        if let Some(algo) = self.algo {
            cfg.algo = algo;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            if let WorkloadSource::Synthetic { spec } = &mut cfg.workload {
                spec.seed = seed;
            }
        }
        if let Some(trace) = &self.trace {
            cfg.workload = default_trace_source(trace.clone());
        }
        if let Some(v) = self.update_interval {
            cfg.topology.update_interval_ms = v;
        }
        if let Some(v) = self.topology {
            cfg.topology.mode = v;
        }
        if let Some(v) = self.delay {
            cfg.topology.delay_ms = v;
        }
        if let Some(v) = self.pops {
            cfg.topology.pop_count = v;
        }
        if let Some(v) = &self.pop_assignment {
            cfg.pop_assignment = match v.as_str() {
                "client" => PopAssignment::Client,
                "class" => PopAssignment::Class,
                other => return Err(Error::Config(format!("unknown pop assignment {other:?}"))),
            };
        }
        if let Some(v) = &self.feature_mask {
            cfg.feature_mask = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        }
        if let Some(v) = &self.knob_mask {
            cfg.knob_mask = v.parse().map_err(|e: Error| Error::Config(e.to_string()))?;
        }
        if let Some(v) = self.epsilon {
            cfg.strategy.ensemble.epsilon = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn load_spec(path: Option<&PathBuf>, seed: u64) -> Result<WorkloadSpec> {
    match path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display()))),
        None => Ok(WorkloadSpec::standard(seed)),
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenWorkload { seed, spec, sessions, write_spec, output } => {
            let mut spec = load_spec(spec.as_ref(), seed)?;
            spec.seed = seed;
            if let Some(n) = sessions {
                spec.session_count = n;
            }
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
            let generated = generate_sessions(&spec)?;
            write_trace(&output, &generated)?;
            if let Some(p) = write_spec {
                fs::write(p, serde_json::to_string_pretty(&spec)?)?;
            }
            println!("wrote {} sessions to {}", generated.len(), output.display());
        }
        Command::BuildOracle { bandwidth, rtt, loss, spec, output } => {
            let spec = load_spec(spec.as_ref(), 1)?;
            let grid = ConditionGrid::new(bandwidth, rtt, loss).map_err(|e| Error::Config(e.to_string()))?;
            let tensor = build_tensor(&grid, &spec.websites, &Default::default())?;
            let sidecar = tensor.save(&output)?;
            println!("wrote {} entries to {} (sha256 {})", sidecar.entries, output.display(), sidecar.sha256);
        }
        Command::Run { exp, output } => {
            let mut cfg = exp.build()?;
            cfg.output = Some(output.clone());
            cfg.validate()?;
            let out = run_experiment(&cfg)?;
            println!("{} sessions, {} model updates; wrote {}", out.rows.len(), out.metadata.updates, output.display());
        }
        Command::Report { results, out_dir, svg, update_interval } => {
            let mut reports = Vec::with_capacity(results.len());
            for path in &results {
                let rows = read_results(path)?;
                let interval = match update_interval {
                    Some(v) => v,
                    None => read_metadata(path).map(|m| m.update_interval_ms).map_err(|_| {
                        Error::Config(format!("{}: no metadata sidecar; pass --update-interval", path.display()))
                    })?,
                };
                reports.push(report(&rows, interval)?);
            }
            write_report(&reports, &out_dir, svg)?;
            println!("{:<16} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8} {:>8}", "algo", "p10", "p25", "p50", "p75", "p90", "p95", "p99");
            for r in &reports {
                let v = r.improvement.values();
                println!("{:<16} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>8.4}", r.algo, v[0], v[1], v[2], v[3], v[4], v[5], v[6]);
            }
        }
        Command::Ablate { exp, axis, subsets, output } => {
            let cfg = exp.build()?;
            let rows = ablate(&cfg, axis, &subsets)?;
            write_ablation(&rows, axis, &output)?;
            for r in &rows {
                println!("{:<32} median {:.4} p95 {:.4}", r.subset, r.improvement.p50, r.improvement.p95);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidConfig(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
