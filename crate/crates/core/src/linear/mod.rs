//! Three-phase LinDistFlow constraints, DER limits and OPF objectives,
//! assembled as a sparse QP for one area.

mod mtx;

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{AreaModel, DerMode, FeederModel};
use crate::powerflow::DerDispatch;
use crate::solver::{CscMatrix, Disc, QpProblem};

pub use mtx::{write_matrix_market, write_vector_market};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveKind {
    /// Minimize the sum of squared branch flows by dispatching DER reactive power.
    LossMin,
    /// Maximize total DER active power.
    DerMax,
}

impl std::str::FromStr for ObjectiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "loss-min" | "loss" => Ok(ObjectiveKind::LossMin),
            "der-max" | "der" => Ok(ObjectiveKind::DerMax),
            _ => Err(format!("unknown objective {:?}", s)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    P,
    Q,
    V,
    Pd,
    Qd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarEntry {
    pub kind: VarKind,
    /// Local branch index for P/Q, bus index for V, DER index for Pd/Qd.
    pub entity: usize,
    pub phase: usize,
    pub label: String,
}

/// Index of every decision variable of an area problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableMap {
    pub entries: Vec<VarEntry>,
    p: Vec<[Option<usize>; 3]>,
    q: Vec<[Option<usize>; 3]>,
    v: Vec<[Option<usize>; 3]>,
    pd: Vec<[Option<usize>; 3]>,
    qd: Vec<[Option<usize>; 3]>,
}

impl VariableMap {
    pub fn new(model: &FeederModel) -> VariableMap {
        let mut map = VariableMap {
            entries: Vec::new(),
            p: vec![[None; 3]; model.n_branches()],
            q: vec![[None; 3]; model.n_branches()],
            v: vec![[None; 3]; model.n_buses()],
            pd: vec![[None; 3]; model.ders().len()],
            qd: vec![[None; 3]; model.ders().len()],
        };
        let ph = ["a", "b", "c"];
        for (k, br) in model.branches().iter().enumerate() {
            let name = format!("{}-{}", model.bus(br.from).id, model.bus(br.to).id);
            for p in br.phases.indices() {
                map.p[k][p] = Some(map.push(VarKind::P, k, p, format!("P[{}].{}", name, ph[p])));
            }
            for p in br.phases.indices() {
                map.q[k][p] = Some(map.push(VarKind::Q, k, p, format!("Q[{}].{}", name, ph[p])));
            }
        }
        for (j, bus) in model.buses().iter().enumerate() {
            for p in bus.phases.indices() {
                map.v[j][p] = Some(map.push(VarKind::V, j, p, format!("v[{}].{}", bus.id, ph[p])));
            }
        }
        for (d, der) in model.ders().iter().enumerate() {
            let id = &model.bus(der.bus).id;
            for p in der.phases.indices() {
                if matches!(der.mode, DerMode::ActiveDispatch | DerMode::FullPq) {
                    map.pd[d][p] = Some(map.push(VarKind::Pd, d, p, format!("pd[{}#{}].{}", id, d, ph[p])));
                }
                if matches!(der.mode, DerMode::ReactiveDispatch | DerMode::FullPq) {
                    map.qd[d][p] = Some(map.push(VarKind::Qd, d, p, format!("qd[{}#{}].{}", id, d, ph[p])));
                }
            }
        }
        map
    }

    fn push(&mut self, kind: VarKind, entity: usize, phase: usize, label: String) -> usize {
        self.entries.push(VarEntry {
            kind,
            entity,
            phase,
            label,
        });
        self.entries.len() - 1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn p(&self, branch: usize, phase: usize) -> Option<usize> {
        self.p[branch][phase]
    }

    pub fn q(&self, branch: usize, phase: usize) -> Option<usize> {
        self.q[branch][phase]
    }

    pub fn v(&self, bus: usize, phase: usize) -> Option<usize> {
        self.v[bus][phase]
    }

    pub fn pd(&self, der: usize, phase: usize) -> Option<usize> {
        self.pd[der][phase]
    }

    pub fn qd(&self, der: usize, phase: usize) -> Option<usize> {
        self.qd[der][phase]
    }

    /// DER set-points implied by a decision vector, fixed parts included.
    pub fn dispatch(&self, model: &FeederModel, x: &[f64]) -> DerDispatch {
        let mut out = DerDispatch::zeros(model.ders().len());
        for (d, der) in model.ders().iter().enumerate() {
            for p in der.phases.indices() {
                out.p[d][p] = match self.pd[d][p] {
                    Some(i) => x[i],
                    None if der.mode == DerMode::ReactiveDispatch => der.p_fixed[p],
                    None => 0.0,
                };
                out.q[d][p] = self.qd[d][p].map_or(0.0, |i| x[i]);
            }
        }
        out
    }

    /// Values of the DER decision variables only, in map order.
    pub fn der_values(&self, x: &[f64]) -> Vec<f64> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| matches!(e.kind, VarKind::Pd | VarKind::Qd))
            .map(|(i, _)| x[i])
            .collect()
    }
}

/// Nominal phase rotation of phase p relative to phase q, times conj(z).
fn coupling(z: Complex64, p: usize, q: usize) -> Complex64 {
    let ratio = Complex64::from_polar(1.0, -2.0 * PI / 3.0 * (p as f64 - q as f64));
    ratio * z.conj()
}

/// Equality and inequality rows of the linear power flow for one area.
#[derive(Debug, Clone)]
pub struct LinearConstraints {
    pub eq: CscMatrix,
    pub eq_rhs: Vec<f64>,
    pub eq_labels: Vec<String>,
    pub ineq: CscMatrix,
    pub ineq_rhs: Vec<f64>,
}

/// Power balance and voltage drop rows for every non-head bus, the head
/// voltage pin, and voltage limits on every bus below the head.
pub fn build_lindistflow(area: &AreaModel, map: &VariableMap) -> LinearConstraints {
    let m = &area.model;
    let n = map.len();
    let head = m.slack();
    let v_head = m.source_voltage();
    let mut eq = Vec::new();
    let mut rhs = Vec::new();
    let mut labels = Vec::new();
    let mut row = 0;
    for &j in m.order() {
        let bus = m.bus(j);
        if j == head {
            for p in bus.phases.indices() {
                eq.push((row, map.v(j, p).unwrap(), 1.0));
                rhs.push(v_head[p] * v_head[p]);
                labels.push(format!("head-voltage[{}].{}", bus.id, p));
                row += 1;
            }
            continue;
        }
        let k = m.parent_branch(j).unwrap();
        let br = m.branch(k);
        for p in bus.phases.indices() {
            let mut p_rhs = bus.load[p].re;
            let q_rhs = bus.load[p].im - bus.shunt_q[p];
            eq.push((row, map.p(k, p).unwrap(), 1.0));
            eq.push((row + 1, map.q(k, p).unwrap(), 1.0));
            for out in m.out_branches(j) {
                if let (Some(pi), Some(qi)) = (map.p(out, p), map.q(out, p)) {
                    eq.push((row, pi, -1.0));
                    eq.push((row + 1, qi, -1.0));
                }
            }
            for &d in m.ders_at(j) {
                let der = &m.ders()[d];
                if !der.phases.has(p) {
                    continue;
                }
                match map.pd(d, p) {
                    Some(i) => eq.push((row, i, 1.0)),
                    None if der.mode == DerMode::ReactiveDispatch => p_rhs -= der.p_fixed[p],
                    None => {}
                }
                if let Some(i) = map.qd(d, p) {
                    eq.push((row + 1, i, 1.0));
                }
            }
            rhs.push(p_rhs);
            rhs.push(q_rhs);
            labels.push(format!("p-balance[{}].{}", bus.id, p));
            labels.push(format!("q-balance[{}].{}", bus.id, p));
            row += 2;
        }
        for p in bus.phases.indices() {
            eq.push((row, map.v(j, p).unwrap(), 1.0));
            eq.push((row, map.v(br.from, p).unwrap(), -1.0));
            for q in br.phases.indices() {
                let g = coupling(br.z[p][q], p, q);
                eq.push((row, map.p(k, q).unwrap(), 2.0 * g.re));
                eq.push((row, map.q(k, q).unwrap(), -2.0 * g.im));
            }
            rhs.push(0.0);
            labels.push(format!("voltage-drop[{}].{}", bus.id, p));
            row += 1;
        }
    }
    let mut ineq = Vec::new();
    let mut ineq_rhs = Vec::new();
    for &j in m.order() {
        if j == head {
            continue;
        }
        let bus = m.bus(j);
        let k = m.parent_branch(j).unwrap();
        let br = m.branch(k);
        if br.from == head {
            // the head voltage is fixed, so limits become flow rows with unit scale
            for p in bus.phases.indices() {
                let mut coeffs = Vec::new();
                for q in br.phases.indices() {
                    let g = coupling(br.z[p][q], p, q);
                    coeffs.push((map.p(k, q).unwrap(), -2.0 * g.re));
                    coeffs.push((map.q(k, q).unwrap(), 2.0 * g.im));
                }
                let scale = coeffs.iter().fold(0.0f64, |a, c| a.max(c.1.abs()));
                if scale == 0.0 {
                    continue;
                }
                let v0 = v_head[p] * v_head[p];
                for (sign, limit) in [(1.0, bus.v_max * bus.v_max), (-1.0, bus.v_min * bus.v_min)] {
                    let r = ineq_rhs.len();
                    for &(c, a) in &coeffs {
                        ineq.push((r, c, sign * a / scale));
                    }
                    ineq_rhs.push(sign * (limit - v0) / scale);
                }
            }
            continue;
        }
        for p in bus.phases.indices() {
            let v = map.v(j, p).unwrap();
            ineq.push((ineq_rhs.len(), v, 1.0));
            ineq_rhs.push(bus.v_max * bus.v_max);
            ineq.push((ineq_rhs.len(), v, -1.0));
            ineq_rhs.push(-bus.v_min * bus.v_min);
        }
    }
    LinearConstraints {
        eq: CscMatrix::from_triplets(row, n, &eq),
        eq_rhs: rhs,
        eq_labels: labels,
        ineq: CscMatrix::from_triplets(ineq_rhs.len(), n, &ineq),
        ineq_rhs,
    }
}

/// Variable bounds and discs for the DER decision variables.
#[derive(Debug, Clone)]
pub struct DerConstraints {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub discs: Vec<Disc>,
}

pub fn build_der_constraints(model: &FeederModel, map: &VariableMap) -> DerConstraints {
    let n = map.len();
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut discs = Vec::new();
    for (d, der) in model.ders().iter().enumerate() {
        for p in der.phases.indices() {
            let s = der.s_rated[p];
            match der.mode {
                DerMode::ReactiveDispatch => {
                    let i = map.qd(d, p).unwrap();
                    let cap = (s * s - der.p_fixed[p] * der.p_fixed[p]).max(0.0).sqrt();
                    lower[i] = -cap;
                    upper[i] = cap;
                }
                DerMode::ActiveDispatch => {
                    let i = map.pd(d, p).unwrap();
                    lower[i] = 0.0;
                    upper[i] = s;
                }
                DerMode::FullPq => discs.push(Disc {
                    a: map.pd(d, p).unwrap(),
                    b: map.qd(d, p).unwrap(),
                    radius: s,
                }),
            }
        }
    }
    DerConstraints { lower, upper, discs }
}

#[derive(Debug, Error)]
pub enum LinearError {
    #[error("{kind:?} objective cannot dispatch DER {der} in {mode:?} mode")]
    IncompatibleMode { kind: ObjectiveKind, der: usize, mode: DerMode },
}

/// Loss minimization dispatches reactive power and DER maximization active
/// power. Full P/Q units fit either.
pub fn check_der_modes(model: &FeederModel, kind: ObjectiveKind) -> Result<(), LinearError> {
    for (d, der) in model.ders().iter().enumerate() {
        let ok = match (kind, der.mode) {
            (_, DerMode::FullPq) => true,
            (ObjectiveKind::LossMin, m) => m == DerMode::ReactiveDispatch,
            (ObjectiveKind::DerMax, m) => m == DerMode::ActiveDispatch,
        };
        if !ok {
            return Err(LinearError::IncompatibleMode {
                kind,
                der: d,
                mode: der.mode,
            });
        }
    }
    Ok(())
}

/// Hessian and linear cost of the chosen objective.
pub fn build_objective(map: &VariableMap, kind: ObjectiveKind) -> (CscMatrix, Vec<f64>) {
    let n = map.len();
    let mut diag = Vec::new();
    let mut f = vec![0.0; n];
    for (i, e) in map.entries.iter().enumerate() {
        match (kind, e.kind) {
            (ObjectiveKind::LossMin, VarKind::P | VarKind::Q) => diag.push((i, i, 2.0)),
            (ObjectiveKind::DerMax, VarKind::Pd) => f[i] = -1.0,
            _ => {}
        }
    }
    (CscMatrix::from_triplets(n, n, &diag), f)
}

/// Complete linear OPF for one area.
#[derive(Debug, Clone)]
pub struct LinearOpfProblem {
    pub area: AreaModel,
    pub map: VariableMap,
    pub kind: ObjectiveKind,
    pub constraints: LinearConstraints,
    pub qp: QpProblem,
}

impl LinearOpfProblem {
    pub fn build(area: AreaModel, kind: ObjectiveKind) -> LinearOpfProblem {
        let map = VariableMap::new(&area.model);
        let constraints = build_lindistflow(&area, &map);
        let ders = build_der_constraints(&area.model, &map);
        let (hessian, linear) = build_objective(&map, kind);
        let qp = QpProblem {
            hessian,
            linear,
            eq: constraints.eq.clone(),
            eq_rhs: constraints.eq_rhs.clone(),
            ineq: constraints.ineq.clone(),
            ineq_rhs: constraints.ineq_rhs.clone(),
            lower: ders.lower,
            upper: ders.upper,
            discs: ders.discs,
        };
        LinearOpfProblem {
            area,
            map,
            kind,
            constraints,
            qp,
        }
    }

    pub fn is_lp(&self) -> bool {
        self.qp.hessian.nnz() == 0
    }

    /// Writes the problem matrices in Matrix Market format plus the
    /// variable map as JSON.
    pub fn dump(&self, dir: impl AsRef<Path>) -> std::io::Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        write_matrix_market(dir.join("H.mtx"), &self.qp.hessian)?;
        write_vector_market(dir.join("f.mtx"), &self.qp.linear)?;
        write_matrix_market(dir.join("A.mtx"), &self.qp.eq)?;
        write_vector_market(dir.join("b.mtx"), &self.qp.eq_rhs)?;
        write_matrix_market(dir.join("G.mtx"), &self.qp.ineq)?;
        write_vector_market(dir.join("h.mtx"), &self.qp.ineq_rhs)?;
        write_vector_market(dir.join("lower.mtx"), &self.qp.lower)?;
        write_vector_market(dir.join("upper.mtx"), &self.qp.upper)?;
        let json = serde_json::to_string_pretty(&self.map).map_err(std::io::Error::other)?;
        std::fs::write(dir.join("variables.json"), json)
    }

    pub fn state(&self, x: &[f64]) -> LinearState {
        LinearState::from_vector(&self.area.model, &self.map, x)
    }
}

/// Voltages and flows read from a linear solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearState {
    pub v: Vec<[f64; 3]>,
    pub flow: Vec<[Complex64; 3]>,
}

impl LinearState {
    pub fn from_vector(model: &FeederModel, map: &VariableMap, x: &[f64]) -> LinearState {
        let v = (0..model.n_buses())
            .map(|j| std::array::from_fn(|p| map.v(j, p).map_or(0.0, |i| x[i])))
            .collect();
        let flow = (0..model.n_branches())
            .map(|k| {
                std::array::from_fn(|p| match (map.p(k, p), map.q(k, p)) {
                    (Some(a), Some(b)) => Complex64::new(x[a], x[b]),
                    _ => Complex64::new(0.0, 0.0),
                })
            })
            .collect();
        LinearState { v, flow }
    }

    /// Series loss in kW implied by the linear flows, using currents built
    /// from the sending-end voltage magnitude at nominal angles.
    pub fn implied_loss(&self, model: &FeederModel) -> f64 {
        let mut loss = 0.0;
        for (k, br) in model.branches().iter().enumerate() {
            let mut i = [Complex64::new(0.0, 0.0); 3];
            for p in br.phases.indices() {
                let vm = self.v[br.from][p].max(1e-12).sqrt();
                let v = Complex64::from_polar(vm, -2.0 * PI / 3.0 * p as f64);
                i[p] = (self.flow[k][p] / v).conj();
            }
            for p in br.phases.indices() {
                for q in br.phases.indices() {
                    loss += (i[p].conj() * br.z[p][q] * i[q]).re;
                }
            }
        }
        loss * model.s_base_kva()
    }

    /// Power entering the head bus: outgoing flows plus its net demand.
    pub fn head_injection(&self, model: &FeederModel, dispatch: &DerDispatch) -> [Complex64; 3] {
        let head = model.slack();
        let bus = model.bus(head);
        let mut s: [Complex64; 3] = std::array::from_fn(|p| {
            if bus.phases.has(p) {
                bus.load[p] - Complex64::new(0.0, bus.shunt_q[p])
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        for &d in model.ders_at(head) {
            for p in model.ders()[d].phases.indices() {
                s[p] -= Complex64::new(dispatch.p[d][p], dispatch.q[d][p]);
            }
        }
        for k in model.out_branches(head) {
            for p in 0..3 {
                s[p] += self.flow[k][p];
            }
        }
        s
    }
}
