use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::agent::AreaAgent;
use super::trace::{BoundaryValue, IterationRecord, TraceRow};
use super::{
    check_consensus, init_boundary, BoundaryMessage, BoundarySnapshot, ConvergenceCriteria, CoordError,
    InterfaceValues, Payload,
};
use crate::commsim::{CommCounters, CommSimulator, CommTopology, Notification, TraceRecord};
use crate::feeder::{AreaPartition, FeederModel};
use crate::linear::ObjectiveKind;
use crate::opf::OpfSettings;
use crate::powerflow::DerDispatch;

#[derive(Debug, Clone)]
pub struct CoordinatorConfig {
    pub kind: ObjectiveKind,
    /// Report boundary values from the twin instead of the linear model.
    pub project: bool,
    pub criteria: ConvergenceCriteria,
    pub opf: OpfSettings,
    /// Time between agent ticks, simulated seconds.
    pub cadence_s: f64,
    pub dispatch_latency_s: f64,
    /// Silence after which an idle agent checks for consensus on its own.
    pub staleness_s: f64,
    pub max_sim_time_s: f64,
    /// Run same-time solves on worker threads.
    pub parallel: bool,
}

impl CoordinatorConfig {
    pub fn new(kind: ObjectiveKind, project: bool) -> CoordinatorConfig {
        CoordinatorConfig {
            kind,
            project,
            criteria: ConvergenceCriteria::default(),
            opf: OpfSettings::default(),
            cadence_s: 2.0,
            dispatch_latency_s: 0.2,
            staleness_s: 4.0,
            max_sim_time_s: 3600.0,
            parallel: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    Converged,
    MaxMacroIterations,
    /// No messages in flight and nothing left to solve.
    Quiescent,
    TimeLimit,
}

#[derive(Debug, Clone)]
pub struct CoordinationResult {
    pub converged: bool,
    pub stop: StopReason,
    /// Completed exchanges on the busiest interface.
    pub rounds: u64,
    /// Tick batches in which some area solved.
    pub macro_iterations: usize,
    pub premature_dispatches: usize,
    /// Time at which the final dispatch took effect.
    pub sim_time_s: f64,
    /// Whole-feeder set-points assembled from the areas' last solutions.
    pub dispatch: DerDispatch,
    /// Sum of area objectives on the linear model, kW.
    pub objective_linear: f64,
    /// Sum of area objectives on the area twins, kW, when projected.
    pub objective_twin: Option<f64>,
    /// Largest boundary change after each solving batch.
    pub residual_history: Vec<f64>,
    pub final_boundary: BoundarySnapshot,
    pub trace: Vec<TraceRow>,
    pub iteration_log: Vec<IterationRecord>,
    pub comm_trace: Vec<TraceRecord>,
    pub comm_counters: CommCounters,
}

impl CoordinationResult {
    pub fn write_trace<W: Write>(&self, writer: W) -> Result<(), CoordError> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.trace {
            w.serialize(r)?;
        }
        w.flush().map_err(|source| CoordError::Io {
            path: "trace".into(),
            source,
        })
    }

    pub fn save_trace(&self, path: impl AsRef<Path>) -> Result<(), CoordError> {
        self.write_trace(std::io::BufWriter::new(create(path.as_ref())?))
    }

    pub fn save_iteration_log(&self, path: impl AsRef<Path>) -> Result<(), CoordError> {
        let w = std::io::BufWriter::new(create(path.as_ref())?);
        serde_json::to_writer_pretty(w, &self.iteration_log)?;
        Ok(())
    }

    pub fn save_comm_trace(&self, path: impl AsRef<Path>) -> Result<(), CoordError> {
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(create(path.as_ref())?));
        for r in &self.comm_trace {
            w.serialize(r)?;
        }
        w.flush().map_err(|source| CoordError::Io {
            path: path.as_ref().display().to_string(),
            source,
        })
    }
}

fn create(path: &Path) -> Result<std::fs::File, CoordError> {
    std::fs::File::create(path).map_err(|source| CoordError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Received history of one interface, as seen by an outside observer.
#[derive(Debug, Clone)]
struct Observed {
    prev: InterfaceValues,
    latest: InterfaceValues,
    to_child: u64,
    to_parent: u64,
}

struct State<'a> {
    model: &'a FeederModel,
    part: &'a AreaPartition,
    config: &'a CoordinatorConfig,
    sim: CommSimulator<BoundaryMessage>,
    agents: Vec<AreaAgent>,
    observed: Vec<Observed>,
    trace: Vec<TraceRow>,
    log: Vec<IterationRecord>,
    residual_history: Vec<f64>,
    macro_iterations: usize,
    premature: usize,
    streak: usize,
    heard_since_record: bool,
}

/// Runs the agents until their boundary values agree, a limit is hit, or
/// nothing more can happen.
pub fn macro_iterate(
    model: &FeederModel,
    part: &AreaPartition,
    comm: CommTopology,
    config: &CoordinatorConfig,
) -> Result<CoordinationResult, CoordError> {
    config.criteria.validate()?;
    let n = part.n_areas();
    if comm.nodes.len() != n {
        return Err(CoordError::NodeCount {
            nodes: comm.nodes.len(),
            areas: n,
        });
    }
    let init = init_boundary(model, part);
    let agents = (0..n).map(|a| AreaAgent::new(model, part, a, &init)).collect();
    let observed = init
        .interfaces
        .iter()
        .map(|v| Observed {
            prev: *v,
            latest: *v,
            to_child: 0,
            to_parent: 0,
        })
        .collect();
    let mut st = State {
        model,
        part,
        config,
        sim: CommSimulator::new(comm),
        agents,
        observed,
        trace: Vec::new(),
        log: Vec::new(),
        residual_history: Vec::new(),
        macro_iterations: 0,
        premature: 0,
        streak: 0,
        heard_since_record: false,
    };
    for a in 0..n {
        st.sim.schedule_tick(a, 0.0)?;
    }
    let stop = st.event_loop()?;
    Ok(st.finish(stop))
}

impl State<'_> {
    fn event_loop(&mut self) -> Result<StopReason, CoordError> {
        let limit = self.config.max_sim_time_s;
        loop {
            let Some((now, first)) = self.sim.next_notification(limit)? else {
                return Ok(StopReason::TimeLimit);
            };
            let mut ticks = Vec::new();
            let mut pending = Some(first);
            loop {
                match pending.take() {
                    Some(Notification::Tick { agent }) => ticks.push(agent),
                    Some(Notification::Delivered(msg)) => {
                        if self.deliver(now, msg.from, msg.to, msg.iteration, &msg.payload) {
                            return Ok(StopReason::Converged);
                        }
                    }
                    None => {}
                }
                if self.sim.peek_time() != Some(now) {
                    break;
                }
                pending = self.sim.next_notification(now)?.map(|(_, n)| n);
            }
            if ticks.is_empty() {
                continue;
            }
            ticks.sort_unstable();
            if let Some(stop) = self.tick_batch(now, &ticks)? {
                return Ok(stop);
            }
            for &a in &ticks {
                self.sim.schedule_tick(a, now + self.config.cadence_s)?;
            }
        }
    }

    /// Handles one delivery. Returns true when it completes consensus.
    fn deliver(&mut self, now: f64, from: usize, to: usize, tag: u64, msg: &BoundaryMessage) -> bool {
        let damping = self.config.criteria.damping;
        if !self.agents[to].receive(from, tag, msg, damping) {
            log::debug!("t={now:.4}: area {to} ignores message {tag} from area {from}");
            return false;
        }
        let s_base = self.model.s_base_kva();
        let obs = &mut self.observed[msg.interface];
        let value = match msg.payload {
            Payload::Voltage(v2) => {
                obs.prev.v2 = obs.latest.v2;
                obs.latest.v2 = v2;
                obs.to_child += 1;
                BoundaryValue::voltage(msg.interface, v2)
            }
            Payload::Flow(s) => {
                obs.prev.flow = obs.latest.flow;
                obs.latest.flow = s;
                obs.to_parent += 1;
                BoundaryValue::flow(msg.interface, s, s_base)
            }
        };
        self.trace.push(TraceRow::event(now, Some(to), "recv").with_value(&value));
        self.heard_since_record = true;
        self.global_check(now)
    }

    fn snapshots(&self) -> (BoundarySnapshot, BoundarySnapshot) {
        (
            BoundarySnapshot {
                interfaces: self.observed.iter().map(|o| o.prev).collect(),
            },
            BoundarySnapshot {
                interfaces: self.observed.iter().map(|o| o.latest).collect(),
            },
        )
    }

    fn current_residual(&self) -> f64 {
        let (prev, latest) = self.snapshots();
        check_consensus(&prev, &latest, &self.config.criteria)
            .map(|c| c.max_residual())
            .unwrap_or(f64::INFINITY)
    }

    /// Consensus over every interface, each direction heard at least once.
    fn global_check(&mut self, now: f64) -> bool {
        if self.agents.iter().any(|a| a.last.is_none()) {
            return false;
        }
        if self.observed.iter().any(|o| o.to_child == 0 || o.to_parent == 0) {
            return false;
        }
        let (prev, latest) = self.snapshots();
        let ok = check_consensus(&prev, &latest, &self.config.criteria).is_ok_and(|c| c.satisfied);
        self.streak = if ok { self.streak + 1 } else { 0 };
        if self.streak < self.config.criteria.consecutive {
            return false;
        }
        self.trace.push(TraceRow::event(now, None, "converged"));
        let r = self.current_residual();
        self.residual_history.push(r);
        true
    }

    /// Consensus on the directions an agent receives, from its own view.
    /// Holds vacuously when it has heard nothing.
    fn local_check(&self, a: usize) -> bool {
        let agent = &self.agents[a];
        let c = &self.config.criteria;
        let mut ok = true;
        if let Some(i) = agent.up() {
            let o = &self.observed[i];
            if o.to_child > 0 {
                ok &= (0..3).all(|p| (o.latest.v2[p] - o.prev.v2[p]).abs() <= c.tol_v);
            }
        }
        for &i in agent.down() {
            let o = &self.observed[i];
            if o.to_parent > 0 {
                ok &= (0..3).all(|p| {
                    let d = o.latest.flow[p] - o.prev.flow[p];
                    d.re.abs() <= c.tol_p && d.im.abs() <= c.tol_p
                });
            }
        }
        ok
    }

    fn tick_batch(&mut self, now: f64, ticks: &[usize]) -> Result<Option<StopReason>, CoordError> {
        if std::mem::take(&mut self.heard_since_record) {
            let r = self.current_residual();
            self.residual_history.push(r);
        }
        let solvers: Vec<usize> = ticks.iter().copied().filter(|&a| self.agents[a].wants_solve()).collect();
        let (model, part, cfg) = (self.model, self.part, self.config);
        let solve = |a: usize| self.agents[a].solve(model, part, cfg.kind, cfg.project, &cfg.opf);
        let results: Vec<_> = if cfg.parallel {
            solvers.par_iter().map(|&a| solve(a)).collect()
        } else {
            solvers.iter().map(|&a| solve(a)).collect()
        };
        let s_base = model.s_base_kva();
        let mut solved = false;
        for (&a, result) in solvers.iter().zip(results) {
            let agent = &mut self.agents[a];
            agent.fresh = false;
            agent.attempted = true;
            let sol = match result {
                Ok(sol) => sol,
                Err(e) => {
                    log::warn!("t={now:.3}: area {a} keeps its previous solution: {e}");
                    continue;
                }
            };
            solved = true;
            agent.iteration += 1;
            agent.dispatched = None;
            let mut received = Vec::new();
            if let Some(i) = agent.up() {
                received.push(BoundaryValue::voltage(i, agent.head_v2));
            }
            for (slot, &i) in agent.down().iter().enumerate() {
                received.push(BoundaryValue::flow(i, agent.withdrawals[slot], s_base));
            }
            let objective = sol.objective_twin.unwrap_or(sol.objective_linear);
            let event = if sol.relaxed { "relaxed-solve" } else { "solve" };
            self.trace.push(TraceRow::event(now, Some(a), event).with_objective(objective));
            let record = IterationRecord {
                area: a,
                iteration: agent.iteration,
                time_s: now,
                objective_lin: sol.objective_linear,
                objective_nl: sol.objective_twin,
                received,
                sent: Vec::new(),
                solver_iterations: sol.solver_iterations,
            };
            agent.last = Some(sol);
            let tag = agent.iteration;
            agent.mark_sent(now);
            let outbox = agent.outbox(part);
            let mut sent = Vec::new();
            for (to, msg) in outbox {
                let value = match msg.payload {
                    Payload::Voltage(v2) => BoundaryValue::voltage(msg.interface, v2),
                    Payload::Flow(s) => BoundaryValue::flow(msg.interface, s, s_base),
                };
                self.trace.push(TraceRow::event(now, Some(a), "send").with_value(&value));
                sent.push(value);
                self.sim.send(a, to, msg.size_bytes(), tag, msg)?;
            }
            self.log.push(IterationRecord { sent, ..record });
        }

        for &a in ticks {
            let agent = &self.agents[a];
            let stale = agent.overdue(&part.neighbors(a), now, cfg.staleness_s);
            if agent.last.is_some() && agent.dispatched.is_none() && stale && self.local_check(a) {
                let objective = agent
                    .last
                    .as_ref()
                    .map(|s| s.objective_twin.unwrap_or(s.objective_linear));
                let mut row = TraceRow::event(now, Some(a), "premature-dispatch");
                row.objective = objective;
                self.trace.push(row);
                self.premature += 1;
                self.agents[a].dispatched = Some(self.agents[a].iteration);
                log::info!("t={now:.3}: area {a} dispatches without hearing back");
            }
        }

        if solved {
            self.macro_iterations += 1;
        }
        if self.observed.is_empty() && self.agents.iter().all(|a| a.last.is_some()) {
            self.trace.push(TraceRow::event(now, None, "converged"));
            return Ok(Some(StopReason::Converged));
        }
        let most = self.agents.iter().map(|a| a.iteration).max().unwrap_or(0);
        if most >= cfg.criteria.max_macro as u64 {
            return Ok(Some(StopReason::MaxMacroIterations));
        }
        let c = self.sim.counters();
        let in_flight = c.enqueued - c.delivered - c.dropped;
        let settled = self
            .agents
            .iter()
            .all(|a| !a.wants_solve() && (a.last.is_none() || a.dispatched.is_some()));
        if !solved && in_flight == 0 && settled {
            return Ok(Some(StopReason::Quiescent));
        }
        Ok(None)
    }

    fn finish(mut self, stop: StopReason) -> CoordinationResult {
        let now = self.sim.now();
        let converged = stop == StopReason::Converged;
        let dispatch_time = if converged {
            now + self.config.dispatch_latency_s
        } else {
            now
        };
        let mut dispatch = DerDispatch::zeros(self.model.ders().len());
        let mut objective_linear = 0.0;
        let mut objective_twin = self.config.project.then_some(0.0);
        for agent in &self.agents {
            let Some(sol) = &agent.last else {
                continue;
            };
            for (l, &g) in agent.global_der.iter().enumerate() {
                dispatch.p[g] = sol.dispatch.p[l];
                dispatch.q[g] = sol.dispatch.q[l];
            }
            objective_linear += sol.objective_linear;
            if let (Some(t), Some(v)) = (objective_twin.as_mut(), sol.objective_twin) {
                *t += v;
            }
            if converged || agent.dispatched.is_none() {
                let objective = sol.objective_twin.unwrap_or(sol.objective_linear);
                self.trace
                    .push(TraceRow::event(dispatch_time, Some(agent.area), "dispatch").with_objective(objective));
            }
        }
        let rounds = self
            .observed
            .iter()
            .map(|o| o.to_child.min(o.to_parent))
            .max()
            .unwrap_or(0);
        let final_boundary = BoundarySnapshot {
            interfaces: self.observed.iter().map(|o| o.latest).collect(),
        };
        CoordinationResult {
            converged,
            stop,
            rounds,
            macro_iterations: self.macro_iterations,
            premature_dispatches: self.premature,
            sim_time_s: dispatch_time,
            dispatch,
            objective_linear,
            objective_twin,
            residual_history: self.residual_history,
            final_boundary,
            trace: self.trace,
            iteration_log: self.log,
            comm_trace: self.sim.trace().to_vec(),
            comm_counters: self.sim.counters(),
        }
    }
}
