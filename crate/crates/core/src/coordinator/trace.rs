use num_complex::Complex64;
use serde::Serialize;

use super::Direction;

/// One row of the coordinator trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub time_s: f64,
    pub area: Option<usize>,
    pub event: &'static str,
    pub interface: Option<usize>,
    pub v_pu2_a: Option<f64>,
    pub v_pu2_b: Option<f64>,
    pub v_pu2_c: Option<f64>,
    #[serde(rename = "P_kw_a")]
    pub p_kw_a: Option<f64>,
    #[serde(rename = "P_kw_b")]
    pub p_kw_b: Option<f64>,
    #[serde(rename = "P_kw_c")]
    pub p_kw_c: Option<f64>,
    #[serde(rename = "Q_kvar_a")]
    pub q_kvar_a: Option<f64>,
    #[serde(rename = "Q_kvar_b")]
    pub q_kvar_b: Option<f64>,
    #[serde(rename = "Q_kvar_c")]
    pub q_kvar_c: Option<f64>,
    pub objective: Option<f64>,
}

impl TraceRow {
    pub fn event(time_s: f64, area: Option<usize>, event: &'static str) -> TraceRow {
        TraceRow {
            time_s,
            area,
            event,
            interface: None,
            v_pu2_a: None,
            v_pu2_b: None,
            v_pu2_c: None,
            p_kw_a: None,
            p_kw_b: None,
            p_kw_c: None,
            q_kvar_a: None,
            q_kvar_b: None,
            q_kvar_c: None,
            objective: None,
        }
    }

    pub fn with_value(mut self, value: &BoundaryValue) -> TraceRow {
        self.interface = Some(value.interface);
        if let Some(v) = value.v_pu2 {
            [self.v_pu2_a, self.v_pu2_b, self.v_pu2_c] = v.map(Some);
        }
        if let Some(p) = value.p_kw {
            [self.p_kw_a, self.p_kw_b, self.p_kw_c] = p.map(Some);
        }
        if let Some(q) = value.q_kvar {
            [self.q_kvar_a, self.q_kvar_b, self.q_kvar_c] = q.map(Some);
        }
        self
    }

    pub fn with_objective(mut self, objective: f64) -> TraceRow {
        self.objective = Some(objective);
        self
    }
}

/// A boundary quantity in engineering units.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryValue {
    pub interface: usize,
    pub direction: Direction,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v_pu2: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_kw: Option<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_kvar: Option<[f64; 3]>,
}

impl BoundaryValue {
    pub fn voltage(interface: usize, v2: [f64; 3]) -> BoundaryValue {
        BoundaryValue {
            interface,
            direction: Direction::ToChild,
            v_pu2: Some(v2),
            p_kw: None,
            q_kvar: None,
        }
    }

    pub fn flow(interface: usize, s: [Complex64; 3], s_base_kva: f64) -> BoundaryValue {
        BoundaryValue {
            interface,
            direction: Direction::ToParent,
            v_pu2: None,
            p_kw: Some(s.map(|x| x.re * s_base_kva)),
            q_kvar: Some(s.map(|x| x.im * s_base_kva)),
        }
    }
}

/// Per-solve log entry.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub area: usize,
    pub iteration: u64,
    pub time_s: f64,
    pub objective_lin: f64,
    pub objective_nl: Option<f64>,
    /// Boundary inputs the solve used.
    pub received: Vec<BoundaryValue>,
    pub sent: Vec<BoundaryValue>,
    pub solver_iterations: usize,
}
