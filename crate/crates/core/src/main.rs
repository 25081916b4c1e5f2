use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use dopf::commsim::TopologyKind;
use dopf::linear::ObjectiveKind;
use dopf::runner::{run, run_stress_matrix, run_timeseries, Mode, RunConfig, RunError};

/// Linear OPF for unbalanced feeders, central or distributed over a simulated network.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Feeder JSON (bundled IEEE 123-bus feeder by default)
    #[arg(long)]
    feeder: Option<PathBuf>,
    /// Partition JSON
    #[arg(long)]
    partition: Option<PathBuf>,
    /// loss-min or der-max
    #[arg(long)]
    objective: Option<ObjectiveKind>,
    /// DER fleet: i, ii, iii or none
    #[arg(long)]
    scenario: Option<String>,
    /// powerflow, central-linear, central-linear-dt, distributed-linear, distributed-linear-dt
    #[arg(long)]
    mode: Option<Mode>,
    /// ideal, ring or blackout, optionally with a bandwidth (`ring:1000`), or a topology JSON file
    #[arg(long)]
    comm: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Time-series steps
    #[arg(long)]
    steps: Option<usize>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Substation voltage, pu
    #[arg(long)]
    slack_v: Option<f64>,
    /// JSON run configuration; its fields override the flags
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run the seeded load time series
    #[arg(long, conflicts_with = "stress")]
    timeseries: bool,
    /// Run the topology and bandwidth matrix
    #[arg(long)]
    stress: bool,
}

fn apply_comm(config: &mut RunConfig, spec: &str) -> Result<(), RunError> {
    let (kind, bw) = match spec.split_once(':') {
        Some((k, b)) => (k, Some(b)),
        None => (spec, None),
    };
    match kind.parse::<TopologyKind>() {
        Ok(kind) => {
            config.comm.kind = kind;
            config.comm.topology = None;
            if let Some(b) = bw {
                config.comm.bandwidth_bps = b
                    .parse()
                    .map_err(|_| RunError::Config(format!("bad bandwidth in --comm {spec:?}")))?;
            }
        }
        Err(_) => config.comm.topology = Some(PathBuf::from(spec)),
    }
    Ok(())
}

fn configure(args: &Args) -> Result<RunConfig, RunError> {
    let mut config = RunConfig::default();
    if let Some(p) = &args.feeder {
        config.feeder = Some(p.clone());
    }
    if let Some(p) = &args.partition {
        config.partition = Some(p.clone());
    }
    if let Some(o) = args.objective {
        config.objective = o;
    }
    if let Some(s) = &args.scenario {
        config.scenario = s.clone();
    }
    if let Some(m) = args.mode {
        config.mode = m;
    }
    if let Some(c) = &args.comm {
        apply_comm(&mut config, c)?;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(n) = args.steps {
        config.timeseries.steps = n;
    }
    if let Some(o) = &args.out {
        config.out = o.clone();
    }
    if args.slack_v.is_some() {
        config.slack_v = args.slack_v;
    }
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path).map_err(|source| RunError::Io {
            path: path.display().to_string(),
            source,
        })?;
        config = config.overlay(&text)?;
    }
    Ok(config)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let config = match configure(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    let result = if args.timeseries {
        run_timeseries(&config).map(|rows| rows.iter().all(|r| r.converged && r.error.is_none()))
    } else if args.stress {
        run_stress_matrix(&config).map(|rows| {
            rows.iter()
                .all(|r| r.error.is_none() && (r.converged || r.topology == TopologyKind::Blackout))
        })
    } else {
        run(&config).map(|o| o.summary.converged)
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("warning: run did not converge; results written to {}", config.out.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
