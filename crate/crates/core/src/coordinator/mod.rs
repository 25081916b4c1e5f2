//! Fixed-point exchange of boundary values between area agents over the
//! simulated network.

mod agent;
mod run;
mod trace;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::commsim::CommError;
use crate::feeder::{AreaPartition, FeederModel};

pub use agent::AreaAgent;
pub use run::{macro_iterate, CoordinationResult, CoordinatorConfig, StopReason};
pub use trace::{BoundaryValue, IterationRecord, TraceRow};

#[derive(Debug, Error)]
pub enum CoordError {
    #[error("boundary snapshots cover different interfaces")]
    InterfaceMismatch,
    #[error("communication topology has {nodes} nodes for {areas} areas")]
    NodeCount { nodes: usize, areas: usize },
    #[error("bad convergence criteria: {0}")]
    Criteria(String),
    #[error(transparent)]
    Comm(#[from] CommError),
    #[error("trace output: {0}")]
    Csv(#[from] csv::Error),
    #[error("log output: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvergenceCriteria {
    /// Squared-voltage tolerance, pu^2.
    pub tol_v: f64,
    /// Active and reactive flow tolerance, pu.
    pub tol_p: f64,
    /// Satisfied checks in a row needed to declare consensus.
    pub consecutive: usize,
    pub max_macro: usize,
    /// Weight of a newly received value; 1.0 is plain substitution.
    pub damping: f64,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        ConvergenceCriteria {
            tol_v: 1e-4,
            tol_p: 1e-4,
            consecutive: 1,
            max_macro: 50,
            damping: 1.0,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<(), CoordError> {
        if !(self.tol_v > 0.0 && self.tol_p > 0.0) {
            return Err(CoordError::Criteria("tolerances must be positive".into()));
        }
        if self.consecutive == 0 || self.max_macro == 0 {
            return Err(CoordError::Criteria("counts must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(CoordError::Criteria(format!("damping {} outside (0, 1]", self.damping)));
        }
        Ok(())
    }
}

/// Values on one interface: the shared-bus voltage sent down and the flow sent up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterfaceValues {
    pub interface: usize,
    pub v2: [f64; 3],
    /// Power entering the child area, pu per phase.
    pub flow: [Complex64; 3],
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundarySnapshot {
    pub interfaces: Vec<InterfaceValues>,
}

impl BoundarySnapshot {
    pub fn get(&self, interface: usize) -> Option<&InterfaceValues> {
        self.interfaces.iter().find(|v| v.interface == interface)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterfaceResidual {
    pub interface: usize,
    pub dv: f64,
    pub dp: f64,
    pub dq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusCheck {
    pub satisfied: bool,
    pub residuals: Vec<InterfaceResidual>,
}

impl ConsensusCheck {
    /// Largest residual of any kind, in pu or pu^2.
    pub fn max_residual(&self) -> f64 {
        self.residuals
            .iter()
            .map(|r| r.dv.max(r.dp).max(r.dq))
            .fold(0.0, f64::max)
    }
}

/// Initial boundary values: flat 1.0 pu^2 voltages and the nominal load
/// below each shared bus, summed without losses.
pub fn init_boundary(model: &FeederModel, part: &AreaPartition) -> BoundarySnapshot {
    let below = subtree_loads(model);
    BoundarySnapshot {
        interfaces: part
            .interfaces()
            .iter()
            .enumerate()
            .map(|(i, iface)| InterfaceValues {
                interface: i,
                v2: [1.0; 3],
                flow: below[iface.shared_bus],
            })
            .collect(),
    }
}

fn subtree_loads(model: &FeederModel) -> Vec<[Complex64; 3]> {
    let mut acc: Vec<[Complex64; 3]> = model.buses().iter().map(|b| b.load).collect();
    for &j in model.order().iter().rev() {
        if let Some(parent) = model.parent(j) {
            let s = acc[j];
            for p in 0..3 {
                acc[parent][p] += s[p];
            }
        }
    }
    acc
}

/// Per-interface change between two snapshots; satisfied when every change is
/// within tolerance.
pub fn check_consensus(
    prev: &BoundarySnapshot,
    next: &BoundarySnapshot,
    criteria: &ConvergenceCriteria,
) -> Result<ConsensusCheck, CoordError> {
    if prev.interfaces.len() != next.interfaces.len() {
        return Err(CoordError::InterfaceMismatch);
    }
    let mut residuals = Vec::with_capacity(next.interfaces.len());
    for b in &next.interfaces {
        let a = prev.get(b.interface).ok_or(CoordError::InterfaceMismatch)?;
        let mut r = InterfaceResidual {
            interface: b.interface,
            dv: 0.0,
            dp: 0.0,
            dq: 0.0,
        };
        for p in 0..3 {
            r.dv = r.dv.max((b.v2[p] - a.v2[p]).abs());
            r.dp = r.dp.max((b.flow[p].re - a.flow[p].re).abs());
            r.dq = r.dq.max((b.flow[p].im - a.flow[p].im).abs());
        }
        residuals.push(r);
    }
    let satisfied = residuals
        .iter()
        .all(|r| r.dv <= criteria.tol_v && r.dp <= criteria.tol_p && r.dq <= criteria.tol_p);
    Ok(ConsensusCheck { satisfied, residuals })
}

/// Direction of a boundary message along the area tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    ToParent,
    ToChild,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    /// Flow into the child area at the shared branch, pu per phase.
    Flow([Complex64; 3]),
    /// Squared voltage at the shared bus, pu^2 per phase.
    Voltage([f64; 3]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryMessage {
    pub interface: usize,
    pub direction: Direction,
    pub payload: Payload,
    /// Latest iteration tag the sender had received from the receiver.
    pub reply_to: u64,
}

impl BoundaryMessage {
    pub fn size_bytes(&self) -> usize {
        match self.payload {
            Payload::Flow(_) => crate::commsim::message_size_bytes(2),
            Payload::Voltage(_) => crate::commsim::message_size_bytes(1),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap(v: f64, p: f64) -> BoundarySnapshot {
        BoundarySnapshot {
            interfaces: vec![InterfaceValues {
                interface: 0,
                v2: [v; 3],
                flow: [Complex64::new(p, 0.1); 3],
            }],
        }
    }

    #[test]
    fn identical_snapshots_agree() {
        let c = check_consensus(&snap(1.0, 0.5), &snap(1.0, 0.5), &ConvergenceCriteria::default()).unwrap();
        assert!(c.satisfied);
        assert_eq!(c.max_residual(), 0.0);
    }

    #[test]
    fn voltage_change_above_tolerance_disagrees() {
        let c = check_consensus(&snap(1.0, 0.5), &snap(1.0005, 0.5), &ConvergenceCriteria::default()).unwrap();
        assert!(!c.satisfied);
        assert!((c.residuals[0].dv - 5e-4).abs() < 1e-12);
    }

    #[test]
    fn mismatched_interfaces_are_an_error() {
        let empty = BoundarySnapshot::default();
        assert!(matches!(
            check_consensus(&empty, &snap(1.0, 0.5), &ConvergenceCriteria::default()),
            Err(CoordError::InterfaceMismatch)
        ));
    }

    #[test]
    fn single_area_has_no_boundary() {
        let m = FeederModel::ieee123();
        assert!(init_boundary(&m, &AreaPartition::single(&m)).interfaces.is_empty());
    }
}
