//! Scenario runner: builds the case from a [`RunConfig`], runs one mode end
//! to end and writes the result files.

mod config;
mod series;

use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

pub use config::{CommConfig, Mode, RunConfig, StressCell, TimeseriesConfig};
pub use series::{
    load_factors, run_stress_matrix, run_timeseries, stress_matrix, timeseries_with_factors, StressRow,
    TimeseriesStep, VoltageSample,
};

use crate::commsim::{build_topology, CommError, CommTopology};
use crate::coordinator::{macro_iterate, CoordError, CoordinationResult, StopReason};
use crate::feeder::{apply_der_scenario, AreaModel, AreaPartition, DerScenario, FeederError, FeederModel};
use crate::linear::{check_der_modes, LinearError, LinearOpfProblem, ObjectiveKind};
use crate::opf::{replay_dispatch, solve_central_linear, voltage_violations, LocalSolution, OpfError};
use crate::powerflow::{DerDispatch, PowerFlowError, PowerFlowSolution};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Feeder(#[from] FeederError),
    #[error(transparent)]
    Incompatible(#[from] LinearError),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error(transparent)]
    Opf(#[from] OpfError),
    #[error(transparent)]
    Coordination(#[from] CoordError),
    #[error(transparent)]
    PowerFlow(#[from] PowerFlowError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output: {0}")]
    Csv(#[from] csv::Error),
    #[error("output: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    /// 1 for problems with the inputs, 2 for a run that could not finish.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Opf(_) | RunError::Coordination(_) | RunError::PowerFlow(_) => 2,
            _ => 1,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Feeder and partition ready to run.
#[derive(Debug, Clone)]
pub struct Case {
    pub model: FeederModel,
    pub partition: AreaPartition,
    pub scenario: Option<DerScenario>,
}

impl Case {
    pub fn prepare(config: &RunConfig) -> Result<Case, RunError> {
        config.validate()?;
        let bundled = config.feeder.is_none();
        let mut model = match &config.feeder {
            Some(path) => FeederModel::load(path)?,
            None => FeederModel::ieee123(),
        };
        let scenario = match config.scenario.to_ascii_lowercase().as_str() {
            "" | "none" => None,
            s => Some(s.parse::<DerScenario>()?),
        };
        if let Some(sc) = scenario {
            model = apply_der_scenario(&model, sc)?;
        }
        if let Some(v) = config.slack_v {
            model = model.with_source_voltage(v);
        }
        check_der_modes(&model, config.objective)?;
        let partition = match &config.partition {
            Some(path) => AreaPartition::load(&model, path)?,
            None if bundled => AreaPartition::ieee123_four_area(&model)?,
            None => AreaPartition::single(&model),
        };
        Ok(Case {
            model,
            partition,
            scenario,
        })
    }

    pub fn with_model(&self, model: FeederModel) -> Case {
        Case {
            model,
            partition: self.partition.clone(),
            scenario: self.scenario,
        }
    }

    pub fn topology(&self, comm: &CommConfig) -> Result<CommTopology, RunError> {
        if let Some(path) = &comm.topology {
            return Ok(CommTopology::load(path)?);
        }
        let edges: Vec<(usize, usize)> = self
            .partition
            .interfaces()
            .iter()
            .map(|i| (i.parent_area, i.child_area))
            .collect();
        Ok(build_topology(
            comm.kind,
            self.partition.n_areas(),
            &edges,
            comm.bandwidth_bps,
            comm.delay_s,
        )?)
    }
}

/// Contents of `summary.json`. Objectives are in kW for loss minimization
/// and MW for DER maximization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub mode: Mode,
    pub objective: ObjectiveKind,
    pub scenario: Option<String>,
    /// The mode's own estimate: linear model for linear modes, twin for DT modes.
    pub objective_kw_or_mw: f64,
    pub objective_unit: &'static str,
    pub rounds: u64,
    pub macro_iterations: usize,
    pub converged: bool,
    pub premature_dispatches: usize,
    pub sim_time_s: f64,
    pub objective_linear: Option<f64>,
    /// Dispatch evaluated on the whole-feeder twin.
    pub objective_replay: f64,
    pub max_voltage_violation_pu: f64,
    pub upper_violations: usize,
    pub lower_violations: usize,
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: Summary,
    pub dispatch: DerDispatch,
    pub replay: PowerFlowSolution,
    pub coordination: Option<CoordinationResult>,
    pub central: Option<LocalSolution>,
    pub wall_time_s: f64,
}

fn unit_scale(kind: ObjectiveKind) -> (f64, &'static str) {
    match kind {
        ObjectiveKind::LossMin => (1.0, "kW"),
        ObjectiveKind::DerMax => (1e-3, "MW"),
    }
}

/// Runs the configured mode on a prepared case without touching the disk.
pub fn execute(case: &Case, config: &RunConfig) -> Result<RunOutcome, RunError> {
    execute_with_comm(case, config, &config.comm)
}

pub fn execute_with_comm(case: &Case, config: &RunConfig, comm: &CommConfig) -> Result<RunOutcome, RunError> {
    let start = Instant::now();
    let model = &case.model;
    let kind = config.objective;
    let (scale, unit) = unit_scale(kind);
    let mut coordination = None;
    let mut central = None;
    let (dispatch, native, linear, rounds, macro_iterations, converged, premature, sim_time, stop) = match config.mode {
        Mode::Powerflow => (DerDispatch::no_opf(model), None, None, 0, 0, true, 0, 0.0, None),
        Mode::CentralLinear | Mode::CentralLinearDt => {
            let sol = solve_central_linear(model, kind, config.mode.projects(), &config.opf)?;
            let out = (
                sol.dispatch.clone(),
                Some(sol.objective_twin.unwrap_or(sol.objective_linear)),
                Some(sol.objective_linear),
                0,
                1,
                true,
                0,
                0.0,
                None,
            );
            central = Some(sol);
            out
        }
        Mode::DistributedLinear | Mode::DistributedLinearDt => {
            let topo = case.topology(comm)?;
            let cfg = config.coordinator(kind);
            let r = macro_iterate(model, &case.partition, topo, &cfg)?;
            let out = (
                r.dispatch.clone(),
                Some(r.objective_twin.unwrap_or(r.objective_linear)),
                Some(r.objective_linear),
                r.rounds,
                r.macro_iterations,
                r.converged,
                r.premature_dispatches,
                r.sim_time_s,
                Some(r.stop),
            );
            coordination = Some(r);
            out
        }
    };
    let (replay, replay_obj) = replay_dispatch(model, &dispatch, kind)?;
    let (worst, over, under) = voltage_violations(model, &replay, 1e-4);
    let summary = Summary {
        mode: config.mode,
        objective: kind,
        scenario: case.scenario.map(|s| s.name().to_string()),
        objective_kw_or_mw: native.unwrap_or(replay_obj) * scale,
        objective_unit: unit,
        rounds,
        macro_iterations,
        converged,
        premature_dispatches: premature,
        sim_time_s: sim_time,
        objective_linear: linear.map(|v| v * scale),
        objective_replay: replay_obj * scale,
        max_voltage_violation_pu: worst,
        upper_violations: over,
        lower_violations: under,
        stop,
    };
    Ok(RunOutcome {
        summary,
        dispatch,
        replay,
        coordination,
        central,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Serialize)]
struct Timing {
    wall_time_s: f64,
}

#[derive(Serialize)]
struct ProfileRow<'a> {
    bus: &'a str,
    phase: char,
    v_pu: f64,
    v_pu2: f64,
    v_min_pu: f64,
    v_max_pu: f64,
}

#[derive(Serialize)]
struct DispatchRow<'a> {
    der: usize,
    bus: &'a str,
    phase: char,
    p_kw: f64,
    q_kvar: f64,
}

pub fn write_voltage_profile(model: &FeederModel, sol: &PowerFlowSolution, path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    for (j, bus) in model.buses().iter().enumerate() {
        for p in bus.phases.iter() {
            let v = sol.v_mag(j, p.index());
            w.serialize(ProfileRow {
                bus: &bus.id,
                phase: p.as_char(),
                v_pu: v,
                v_pu2: v * v,
                v_min_pu: bus.v_min,
                v_max_pu: bus.v_max,
            })?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn write_dispatch(model: &FeederModel, dispatch: &DerDispatch, path: &Path) -> Result<(), RunError> {
    let mut w = csv::Writer::from_path(path)?;
    let s_base = model.s_base_kva();
    for (d, der) in model.ders().iter().enumerate() {
        for p in der.phases.iter() {
            let i = p.index();
            w.serialize(DispatchRow {
                der: d,
                bus: &model.bus(der.bus).id,
                phase: p.as_char(),
                p_kw: dispatch.p[d][i] * s_base,
                q_kvar: dispatch.q[d][i] * s_base,
            })?;
        }
    }
    w.flush().map_err(io_err(path))
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

/// Writes the result files of one run into `dir`.
pub fn write_outcome(case: &Case, config: &RunConfig, outcome: &RunOutcome, dir: &Path) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_json(&outcome.summary, &dir.join("summary.json"))?;
    write_json(
        &Timing {
            wall_time_s: outcome.wall_time_s,
        },
        &dir.join("timing.json"),
    )?;
    write_voltage_profile(&case.model, &outcome.replay, &dir.join("voltage_profile.csv"))?;
    write_dispatch(&case.model, &outcome.dispatch, &dir.join("dispatch.csv"))?;
    if let Some(r) = &outcome.coordination {
        r.save_trace(dir.join("trace.csv"))?;
        r.save_comm_trace(dir.join("comm_trace.csv"))?;
        r.save_iteration_log(dir.join("iterations.json"))?;
    }
    if outcome.central.is_some() {
        let problem = LinearOpfProblem::build(AreaModel::whole(&case.model), config.objective);
        let pdir = dir.join("problem");
        problem.dump(&pdir).map_err(io_err(&pdir))?;
    }
    Ok(())
}

/// Prepares, runs and writes one configured run.
pub fn run(config: &RunConfig) -> Result<RunOutcome, RunError> {
    let case = Case::prepare(config)?;
    let outcome = execute(&case, config)?;
    write_outcome(&case, config, &outcome, &config.out)?;
    log::info!(
        "{} {:?}: objective {:.4} {}, rounds {}, converged {}",
        config.mode,
        config.objective,
        outcome.summary.objective_kw_or_mw,
        outcome.summary.objective_unit,
        outcome.summary.rounds,
        outcome.summary.converged
    );
    Ok(outcome)
}
