//! Distributed optimal power flow for unbalanced three-phase radial feeders.
//!
//! Areas solve a linearized OPF locally, project their decisions through a
//! nonlinear power-flow twin, and exchange boundary voltages and flows over a
//! simulated communication network until they agree.

pub mod feeder;
pub mod phase;

pub use feeder::{FeederError, FeederModel};
pub use phase::{Phase, PhaseSet};
pub mod powerflow;
pub mod solver;
pub mod linear;
pub mod opf;
pub mod commsim;
pub mod coordinator;
pub mod runner;
