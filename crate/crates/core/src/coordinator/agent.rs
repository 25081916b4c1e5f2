use std::collections::HashMap;

use num_complex::Complex64;

use super::{BoundaryMessage, BoundarySnapshot, Payload};
use crate::feeder::{AreaPartition, FeederModel};
use crate::linear::ObjectiveKind;
use crate::opf::{solve_elastic, solve_local_subproblem, LocalSolution, OpfError, OpfSettings};
use crate::solver::SolveStatus;

/// Controller of one area. Holds only what it has been told.
#[derive(Debug, Clone)]
pub struct AreaAgent {
    pub area: usize,
    /// Squared head voltage in use, pu^2.
    pub head_v2: [f64; 3],
    /// Withdrawal at each child interface, in `Area::down` order.
    pub withdrawals: Vec<[Complex64; 3]>,
    /// Completed local solves.
    pub iteration: u64,
    pub last: Option<LocalSolution>,
    /// Global indices of the area's DERs.
    pub global_der: Vec<usize>,
    /// A value arrived since the last solve.
    pub fresh: bool,
    pub attempted: bool,
    /// Iteration at which the current solution was dispatched.
    pub dispatched: Option<u64>,
    up: Option<usize>,
    down: Vec<usize>,
    /// Latest tag received from each neighbour.
    tags: HashMap<usize, u64>,
    /// Latest own tag each neighbour has answered.
    answered: HashMap<usize, u64>,
    /// Send time of each own tag, index `tag - 1`.
    sent_at: Vec<f64>,
}

impl AreaAgent {
    pub fn new(model: &FeederModel, part: &AreaPartition, area: usize, init: &BoundarySnapshot) -> AreaAgent {
        let a = part.area(area);
        let head_v2 = match a.up {
            Some(i) => init.get(i).map_or([1.0; 3], |v| v.v2),
            None => model.source_voltage().map(|v| v * v),
        };
        let withdrawals = a
            .down
            .iter()
            .map(|&i| init.get(i).map_or([Complex64::new(0.0, 0.0); 3], |v| v.flow))
            .collect();
        let global_der = model
            .ders()
            .iter()
            .enumerate()
            .filter(|(_, d)| part.area_of(d.bus) == area)
            .map(|(k, _)| k)
            .collect();
        AreaAgent {
            area,
            head_v2,
            withdrawals,
            iteration: 0,
            last: None,
            global_der,
            fresh: false,
            attempted: false,
            dispatched: None,
            up: a.up,
            down: a.down.clone(),
            tags: HashMap::new(),
            answered: HashMap::new(),
            sent_at: Vec::new(),
        }
    }

    pub fn wants_solve(&self) -> bool {
        self.fresh || !self.attempted
    }

    /// Local OPF with the boundary values currently held. An infeasible
    /// area falls back to its least-violating set-points so that its
    /// neighbours keep hearing from it.
    pub fn solve(
        &self,
        model: &FeederModel,
        part: &AreaPartition,
        kind: ObjectiveKind,
        project: bool,
        settings: &OpfSettings,
    ) -> Result<LocalSolution, OpfError> {
        let am = part.area_model(model, self.area, self.head_v2, &self.withdrawals);
        match solve_local_subproblem(am.clone(), kind, project, settings, None) {
            Err(OpfError::NotSolved { status, .. }) if status == SolveStatus::PrimalInfeasible => {
                log::warn!("area {} is infeasible, relaxing its voltage limits", self.area);
                solve_elastic(am, kind, project, settings)
            }
            other => other,
        }
    }

    /// Outgoing messages for the current solution.
    pub fn outbox(&self, part: &AreaPartition) -> Vec<(usize, BoundaryMessage)> {
        let Some(sol) = &self.last else {
            return Vec::new();
        };
        let reply_to = |to: usize| self.tags.get(&to).copied().unwrap_or(0);
        let mut out = Vec::new();
        if let Some(i) = self.up {
            let to = part.interface(i).parent_area;
            out.push((
                to,
                BoundaryMessage {
                    interface: i,
                    direction: super::Direction::ToParent,
                    payload: Payload::Flow(sol.boundary.head_injection),
                    reply_to: reply_to(to),
                },
            ));
        }
        for (slot, &i) in self.down.iter().enumerate() {
            let to = part.interface(i).child_area;
            out.push((
                to,
                BoundaryMessage {
                    interface: i,
                    direction: super::Direction::ToChild,
                    payload: Payload::Voltage(sol.boundary.child_voltages[slot]),
                    reply_to: reply_to(to),
                },
            ));
        }
        out
    }

    /// Takes in a neighbour's value. Returns false for a stale or repeated tag.
    pub fn receive(&mut self, from: usize, tag: u64, msg: &BoundaryMessage, damping: f64) -> bool {
        if self.tags.get(&from).is_some_and(|&t| t >= tag) {
            return false;
        }
        self.tags.insert(from, tag);
        let answered = self.answered.entry(from).or_insert(0);
        *answered = (*answered).max(msg.reply_to);
        let mix = |old: f64, new: f64| old + damping * (new - old);
        match msg.payload {
            Payload::Voltage(v2) if self.up == Some(msg.interface) => {
                for p in 0..3 {
                    self.head_v2[p] = mix(self.head_v2[p], v2[p]);
                }
            }
            Payload::Flow(s) => {
                let Some(slot) = self.down.iter().position(|&i| i == msg.interface) else {
                    return false;
                };
                let w = &mut self.withdrawals[slot];
                for p in 0..3 {
                    w[p] = Complex64::new(mix(w[p].re, s[p].re), mix(w[p].im, s[p].im));
                }
            }
            Payload::Voltage(_) => return false,
        }
        self.fresh = true;
        true
    }

    /// Records the send time of the current iteration.
    pub fn mark_sent(&mut self, now: f64) {
        self.sent_at.resize(self.iteration as usize, now);
    }

    /// Some neighbour has left one of our sends unanswered for `window` seconds.
    pub fn overdue(&self, neighbors: &[usize], now: f64, window: f64) -> bool {
        neighbors.iter().any(|nb| {
            let next = self.answered.get(nb).copied().unwrap_or(0) + 1;
            next <= self.iteration && now - self.sent_at[next as usize - 1] >= window - 1e-9
        })
    }

    pub fn up(&self) -> Option<usize> {
        self.up
    }

    pub fn down(&self) -> &[usize] {
        &self.down
    }
}
