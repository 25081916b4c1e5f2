use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{execute, execute_with_comm, io_err, Case, CommConfig, RunConfig, RunError};
use crate::commsim::TopologyKind;
use crate::opf::{replay_dispatch, voltage_violations};
use crate::powerflow::{DerDispatch, PowerFlowSolution};

/// One row of `timeseries.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeseriesStep {
    pub step: usize,
    pub minute: f64,
    pub load_factor: f64,
    pub objective_kw_or_mw: Option<f64>,
    pub objective_replay: Option<f64>,
    pub converged: bool,
    pub rounds: u64,
    pub v_min_pu: Option<f64>,
    pub v_max_pu: Option<f64>,
    pub upper_violations: Option<usize>,
    pub baseline_objective: f64,
    pub baseline_v_min_pu: f64,
    pub baseline_v_max_pu: f64,
    pub baseline_upper_violations: usize,
    pub error: Option<String>,
}

/// One bus-phase voltage of one step, for distribution plots.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VoltageSample {
    pub step: usize,
    /// `no-opf` or `opf`.
    pub case: &'static str,
    pub bus: String,
    pub phase: char,
    pub v_pu: f64,
}

fn samples(case: &Case, step: usize, tag: &'static str, sol: &PowerFlowSolution, out: &mut Vec<VoltageSample>) {
    for (j, bus) in case.model.buses().iter().enumerate() {
        for p in bus.phases.iter() {
            out.push(VoltageSample {
                step,
                case: tag,
                bus: bus.id.clone(),
                phase: p.as_char(),
                v_pu: sol.v_mag(j, p.index()),
            });
        }
    }
}

/// Seeded uniform load factors, one per step.
pub fn load_factors(config: &RunConfig) -> Vec<f64> {
    let ts = &config.timeseries;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..ts.steps)
        .map(|_| {
            if ts.load_max > ts.load_min {
                rng.gen_range(ts.load_min..=ts.load_max)
            } else {
                ts.load_min
            }
        })
        .collect()
}

/// Runs the configured mode once per load factor. A failed step is recorded
/// and the series continues.
pub fn timeseries_with_factors(
    case: &Case,
    config: &RunConfig,
    factors: &[f64],
) -> Result<(Vec<TimeseriesStep>, Vec<VoltageSample>), RunError> {
    let mut rows = Vec::with_capacity(factors.len());
    let mut volts = Vec::new();
    let kind = config.objective;
    let scale = match kind {
        crate::linear::ObjectiveKind::LossMin => 1.0,
        crate::linear::ObjectiveKind::DerMax => 1e-3,
    };
    for (step, &f) in factors.iter().enumerate() {
        let scaled = case.with_model(case.model.scale_loads_uniform(f));
        let (base_pf, base_obj) = replay_dispatch(&scaled.model, &DerDispatch::no_opf(&scaled.model), kind)?;
        let (bmin, bmax) = base_pf.voltage_range(&scaled.model);
        let (_, bover, _) = voltage_violations(&scaled.model, &base_pf, 1e-4);
        samples(&scaled, step, "no-opf", &base_pf, &mut volts);
        let mut row = TimeseriesStep {
            step,
            minute: step as f64 * config.timeseries.step_minutes,
            load_factor: f,
            objective_kw_or_mw: None,
            objective_replay: None,
            converged: false,
            rounds: 0,
            v_min_pu: None,
            v_max_pu: None,
            upper_violations: None,
            baseline_objective: base_obj * scale,
            baseline_v_min_pu: bmin,
            baseline_v_max_pu: bmax,
            baseline_upper_violations: bover,
            error: None,
        };
        match execute(&scaled, config) {
            Ok(out) => {
                let (lo, hi) = out.replay.voltage_range(&scaled.model);
                row.objective_kw_or_mw = Some(out.summary.objective_kw_or_mw);
                row.objective_replay = Some(out.summary.objective_replay);
                row.converged = out.summary.converged;
                row.rounds = out.summary.rounds;
                row.v_min_pu = Some(lo);
                row.v_max_pu = Some(hi);
                row.upper_violations = Some(out.summary.upper_violations);
                samples(&scaled, step, "opf", &out.replay, &mut volts);
            }
            Err(e) => {
                log::warn!("step {step}: {e}");
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    Ok((rows, volts))
}

/// Seeded time series of the configured mode; writes `timeseries.csv` and
/// `voltages.csv` to the output directory.
pub fn run_timeseries(config: &RunConfig) -> Result<Vec<TimeseriesStep>, RunError> {
    let case = Case::prepare(config)?;
    let factors = load_factors(config);
    let (rows, volts) = timeseries_with_factors(&case, config, &factors)?;
    let dir = &config.out;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&rows, &dir.join("timeseries.csv"))?;
    write_csv(&volts, &dir.join("voltages.csv"))?;
    Ok(rows)
}

/// One row of `stress.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StressRow {
    pub topology: TopologyKind,
    pub bandwidth_bps: f64,
    pub objective_kw_or_mw: Option<f64>,
    pub objective_replay: Option<f64>,
    pub rounds: u64,
    pub macro_iterations: usize,
    pub sim_time_s: Option<f64>,
    pub premature_dispatches: usize,
    pub converged: bool,
    pub error: Option<String>,
}

/// The configured distributed mode under every topology and bandwidth of
/// `config.stress`. A failing cell is recorded and the matrix continues.
pub fn stress_matrix(case: &Case, config: &RunConfig) -> Result<Vec<StressRow>, RunError> {
    if !config.mode.is_distributed() {
        return Err(RunError::Config(format!(
            "stress matrix needs a distributed mode, got {}",
            config.mode
        )));
    }
    let mut rows = Vec::new();
    for cell in &config.stress {
        let comm = CommConfig {
            kind: cell.kind,
            bandwidth_bps: cell.bandwidth_bps,
            delay_s: config.comm.delay_s,
            topology: None,
        };
        let mut row = StressRow {
            topology: cell.kind,
            bandwidth_bps: cell.bandwidth_bps,
            objective_kw_or_mw: None,
            objective_replay: None,
            rounds: 0,
            macro_iterations: 0,
            sim_time_s: None,
            premature_dispatches: 0,
            converged: false,
            error: None,
        };
        match execute_with_comm(case, config, &comm) {
            Ok(out) => {
                let s = out.summary;
                row.objective_kw_or_mw = Some(s.objective_kw_or_mw);
                row.objective_replay = Some(s.objective_replay);
                row.rounds = s.rounds;
                row.macro_iterations = s.macro_iterations;
                row.sim_time_s = Some(s.sim_time_s);
                row.premature_dispatches = s.premature_dispatches;
                row.converged = s.converged;
            }
            Err(e) => {
                log::warn!("{}: {e}", comm.label());
                row.error = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Runs the stress matrix and writes `stress.csv`.
pub fn run_stress_matrix(config: &RunConfig) -> Result<Vec<StressRow>, RunError> {
    let case = Case::prepare(config)?;
    let rows = stress_matrix(&case, config)?;
    let dir = &config.out;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_csv(&rows, &dir.join("stress.csv"))?;
    Ok(rows)
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err(path))
}
