//! Feeder data model: buses, branches, DERs in per-unit, with the radial tree
//! rooted at the slack bus.

mod document;
mod partition;
mod scenario;

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phase::PhaseSet;

pub use document::{
    AreaRecord, BranchRecord, BusRecord, DerRecord, FeederDocument, PartitionDocument, PhaseMatrix,
    PhaseValues,
};
pub use partition::{partition_feeder, Area, AreaModel, AreaPartition, BoundaryInterface};
pub use scenario::{apply_der_scenario, thirty_der_sites, DerScenario, TEN_DER_SITES};

const IEEE123_JSON: &str = include_str!("../../data/ieee123.json");
const IEEE123_4AREA_JSON: &str = include_str!("../../data/ieee123_4area.json");

#[derive(Debug, Error)]
pub enum FeederError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("duplicate bus id {0}")]
    DuplicateBus(String),
    #[error("unknown bus {0}")]
    UnknownBus(String),
    #[error("expected exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("cycle detected: branch {from}-{to} closes a loop")]
    Cycle { from: String, to: String },
    #[error("bus {0} is not connected to the slack bus")]
    Disconnected(String),
    #[error("branch {from}-{to} points toward the slack bus")]
    Orientation { from: String, to: String },
    #[error("phase inconsistency: {0}")]
    Phase(String),
    #[error("partition error: {0}")]
    Partition(String),
    #[error("unknown DER scenario {0:?}")]
    Scenario(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerMode {
    /// Active power fixed, reactive power dispatchable.
    ReactiveDispatch,
    /// Reactive power zero, active power dispatchable.
    ActiveDispatch,
    /// Both dispatchable inside the apparent-power disc.
    FullPq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: String,
    pub phases: PhaseSet,
    /// Constant-power demand per phase, pu.
    pub load: [Complex64; 3],
    /// Fixed capacitor injection per phase, pu.
    pub shunt_q: [f64; 3],
    pub v_min: f64,
    pub v_max: f64,
    pub slack: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub phases: PhaseSet,
    /// Phase impedance matrix, pu. Entries outside `phases` are zero.
    pub z: [[Complex64; 3]; 3],
    pub ampacity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Der {
    pub bus: usize,
    pub phases: PhaseSet,
    /// Apparent-power rating per phase, pu.
    pub s_rated: [f64; 3],
    pub mode: DerMode,
    /// Active output for reactive-dispatch units, pu.
    pub p_fixed: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct FeederModel {
    base_kva: f64,
    base_kv: f64,
    source_v: [f64; 3],
    buses: Vec<Bus>,
    branches: Vec<Branch>,
    ders: Vec<Der>,
    index: HashMap<String, usize>,
    slack: usize,
    parent_branch: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    order: Vec<usize>,
    ders_at: Vec<Vec<usize>>,
}

fn values(v: &PhaseValues, phases: PhaseSet, what: &str, owner: &str) -> Result<[f64; 3], FeederError> {
    let mut out = [0.0; 3];
    for i in 0..3 {
        match v[i] {
            Some(x) if !x.is_finite() => {
                return Err(FeederError::Schema(format!("{} of {} is not finite", what, owner)))
            }
            Some(x) if !phases.has(i) && x != 0.0 => {
                return Err(FeederError::Phase(format!(
                    "{} of {} set on absent phase {}",
                    what,
                    owner,
                    ["a", "b", "c"][i]
                )))
            }
            Some(x) if phases.has(i) => out[i] = x,
            _ => {}
        }
    }
    Ok(out)
}

fn unit_values(v: [f64; 3], phases: PhaseSet) -> PhaseValues {
    let mut out = [None; 3];
    for i in phases.indices() {
        out[i] = Some(v[i]);
    }
    out
}

impl FeederModel {
    /// Validates a document and converts it to per-unit.
    pub fn from_document(doc: &FeederDocument) -> Result<FeederModel, FeederError> {
        if !(doc.base_kva > 0.0 && doc.base_kv > 0.0) {
            return Err(FeederError::Schema("bases must be positive".into()));
        }
        let s_base = doc.base_kva / 3.0;
        let z_base = doc.base_kv * doc.base_kv * 1000.0 / doc.base_kva;
        let i_base = s_base / (doc.base_kv / 3f64.sqrt());

        let mut index = HashMap::new();
        let mut buses = Vec::with_capacity(doc.buses.len());
        for rec in &doc.buses {
            if index.insert(rec.id.clone(), buses.len()).is_some() {
                return Err(FeederError::DuplicateBus(rec.id.clone()));
            }
            let owner = format!("bus {}", rec.id);
            let p = values(&rec.load_kw, rec.phases, "load_kw", &owner)?;
            let q = values(&rec.load_kvar, rec.phases, "load_kvar", &owner)?;
            let c = values(&rec.shunt_kvar, rec.phases, "shunt_kvar", &owner)?;
            if !(rec.vmin > 0.0 && rec.vmin <= rec.vmax) {
                return Err(FeederError::Schema(format!("{} has invalid voltage limits", owner)));
            }
            buses.push(Bus {
                id: rec.id.clone(),
                phases: rec.phases,
                load: std::array::from_fn(|i| Complex64::new(p[i], q[i]) / s_base),
                shunt_q: c.map(|x| x / s_base),
                v_min: rec.vmin,
                v_max: rec.vmax,
                slack: rec.slack,
            });
        }
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| FeederError::UnknownBus(id.to_string()));

        let mut branches = Vec::with_capacity(doc.branches.len());
        for rec in &doc.branches {
            let from = lookup(&rec.from)?;
            let to = lookup(&rec.to)?;
            let owner = format!("branch {}-{}", rec.from, rec.to);
            if !rec.phases.is_subset(buses[from].phases) || !rec.phases.is_subset(buses[to].phases) {
                return Err(FeederError::Phase(format!("{} uses phases not present at its end buses", owner)));
            }
            let mut z = [[Complex64::new(0.0, 0.0); 3]; 3];
            for i in 0..3 {
                for k in 0..3 {
                    let (r, x) = (rec.r_ohm[i][k], rec.x_ohm[i][k]);
                    if rec.phases.has(i) && rec.phases.has(k) {
                        let (r, x) = match (r, x) {
                            (Some(r), Some(x)) if r.is_finite() && x.is_finite() => (r, x),
                            _ => {
                                return Err(FeederError::Schema(format!(
                                    "{} is missing impedance entry ({}, {})",
                                    owner, i, k
                                )))
                            }
                        };
                        z[i][k] = Complex64::new(r, x) / z_base;
                    } else if r.unwrap_or(0.0) != 0.0 || x.unwrap_or(0.0) != 0.0 {
                        return Err(FeederError::Phase(format!("{} has impedance on an absent phase", owner)));
                    }
                }
            }
            branches.push(Branch {
                from,
                to,
                phases: rec.phases,
                z,
                ampacity: rec.amps.map(|a| a / i_base),
            });
        }

        let mut ders = Vec::with_capacity(doc.ders.len());
        for rec in &doc.ders {
            let bus = lookup(&rec.bus)?;
            let owner = format!("DER at bus {}", rec.bus);
            if !rec.phases.is_subset(buses[bus].phases) {
                return Err(FeederError::Phase(format!("{} uses phases absent at the bus", owner)));
            }
            let s = values(&rec.s_kva, rec.phases, "s_kva", &owner)?.map(|x| x / s_base);
            let p = values(&rec.p_fixed_kw, rec.phases, "p_fixed_kw", &owner)?.map(|x| x / s_base);
            for i in rec.phases.indices() {
                if s[i] < 0.0 {
                    return Err(FeederError::Schema(format!("{} has a negative rating", owner)));
                }
                if rec.mode == DerMode::ReactiveDispatch && p[i].abs() > s[i] * (1.0 + 1e-12) {
                    return Err(FeederError::Schema(format!("{} has fixed output above its rating", owner)));
                }
            }
            ders.push(Der {
                bus,
                phases: rec.phases,
                s_rated: s,
                mode: rec.mode,
                p_fixed: p,
            });
        }

        let v0 = doc.source_v_pu.unwrap_or(1.0);
        if !(v0 > 0.0) {
            return Err(FeederError::Schema("source_v_pu must be positive".into()));
        }
        FeederModel::assemble(doc.base_kva, doc.base_kv, [v0; 3], buses, branches, ders)
    }

    /// Builds the tree index and checks radiality.
    pub(crate) fn assemble(
        base_kva: f64,
        base_kv: f64,
        source_v: [f64; 3],
        buses: Vec<Bus>,
        branches: Vec<Branch>,
        ders: Vec<Der>,
    ) -> Result<FeederModel, FeederError> {
        let n = buses.len();
        let slacks: Vec<usize> = (0..n).filter(|&i| buses[i].slack).collect();
        if slacks.len() != 1 {
            return Err(FeederError::SlackCount(slacks.len()));
        }
        let slack = slacks[0];

        // Union-find so the first loop-closing branch is the one reported.
        let mut root: Vec<usize> = (0..n).collect();
        fn find(root: &mut [usize], mut i: usize) -> usize {
            while root[i] != i {
                root[i] = root[root[i]];
                i = root[i];
            }
            i
        }
        for br in &branches {
            let (a, b) = (find(&mut root, br.from), find(&mut root, br.to));
            if a == b {
                return Err(FeederError::Cycle {
                    from: buses[br.from].id.clone(),
                    to: buses[br.to].id.clone(),
                });
            }
            root[a] = b;
        }

        let mut adjacency = vec![Vec::new(); n];
        for (k, br) in branches.iter().enumerate() {
            adjacency[br.from].push(k);
            adjacency[br.to].push(k);
        }
        let mut parent_branch = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut seen = vec![false; n];
        let mut order = Vec::with_capacity(n);
        let mut queue = std::collections::VecDeque::from([slack]);
        seen[slack] = true;
        while let Some(i) = queue.pop_front() {
            order.push(i);
            for &k in &adjacency[i] {
                let br = &branches[k];
                let other = if br.from == i { br.to } else { br.from };
                if seen[other] {
                    continue;
                }
                if br.from != i {
                    return Err(FeederError::Orientation {
                        from: buses[br.from].id.clone(),
                        to: buses[br.to].id.clone(),
                    });
                }
                seen[other] = true;
                parent_branch[other] = Some(k);
                children[i].push(other);
                queue.push_back(other);
            }
        }
        if let Some(j) = (0..n).find(|&j| !seen[j]) {
            return Err(FeederError::Disconnected(buses[j].id.clone()));
        }
        for (j, bus) in buses.iter().enumerate() {
            if j != slack {
                let br = &branches[parent_branch[j].unwrap()];
                if br.phases != bus.phases {
                    return Err(FeederError::Phase(format!(
                        "bus {} has phases {} but is fed by a {} branch",
                        bus.id, bus.phases, br.phases
                    )));
                }
            }
        }
        let index = buses.iter().enumerate().map(|(i, b)| (b.id.clone(), i)).collect();
        let mut ders_at = vec![Vec::new(); n];
        for (d, der) in ders.iter().enumerate() {
            ders_at[der.bus].push(d);
        }
        Ok(FeederModel {
            base_kva,
            base_kv,
            source_v,
            buses,
            branches,
            ders,
            index,
            slack,
            parent_branch,
            children,
            order,
            ders_at,
        })
    }

    pub fn from_json_str(s: &str) -> Result<FeederModel, FeederError> {
        let doc: FeederDocument = serde_json::from_str(s)?;
        FeederModel::from_document(&doc)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<FeederModel, FeederError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| FeederError::Io {
            path: path.display().to_string(),
            source,
        })?;
        FeederModel::from_json_str(&text)
    }

    /// The bundled IEEE 123-bus feeder without DERs.
    pub fn ieee123() -> FeederModel {
        FeederModel::from_json_str(IEEE123_JSON).expect("bundled feeder is valid")
    }

    /// Converts back to physical units.
    pub fn to_document(&self) -> FeederDocument {
        let s_base = self.s_base_kva();
        let z_base = self.z_base_ohm();
        let i_base = self.i_base_amp();
        let v0 = self.source_v[0];
        FeederDocument {
            base_kva: self.base_kva,
            base_kv: self.base_kv,
            source_v_pu: if v0 == 1.0 { None } else { Some(v0) },
            buses: self
                .buses
                .iter()
                .map(|b| BusRecord {
                    id: b.id.clone(),
                    phases: b.phases,
                    load_kw: unit_values(b.load.map(|s| s.re * s_base), b.phases),
                    load_kvar: unit_values(b.load.map(|s| s.im * s_base), b.phases),
                    shunt_kvar: unit_values(b.shunt_q.map(|q| q * s_base), b.phases),
                    vmin: b.v_min,
                    vmax: b.v_max,
                    slack: b.slack,
                })
                .collect(),
            branches: self
                .branches
                .iter()
                .map(|br| {
                    let mut r = [[None; 3]; 3];
                    let mut x = [[None; 3]; 3];
                    for i in br.phases.indices() {
                        for k in br.phases.indices() {
                            r[i][k] = Some(br.z[i][k].re * z_base);
                            x[i][k] = Some(br.z[i][k].im * z_base);
                        }
                    }
                    BranchRecord {
                        from: self.buses[br.from].id.clone(),
                        to: self.buses[br.to].id.clone(),
                        phases: br.phases,
                        r_ohm: r,
                        x_ohm: x,
                        amps: br.ampacity.map(|a| a * i_base),
                    }
                })
                .collect(),
            ders: self
                .ders
                .iter()
                .map(|d| DerRecord {
                    bus: self.buses[d.bus].id.clone(),
                    phases: d.phases,
                    s_kva: unit_values(d.s_rated.map(|s| s * s_base), d.phases),
                    mode: d.mode,
                    p_fixed_kw: unit_values(d.p_fixed.map(|p| p * s_base), d.phases),
                })
                .collect(),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("document serializes")
    }

    pub fn base_kva(&self) -> f64 {
        self.base_kva
    }

    pub fn base_kv(&self) -> f64 {
        self.base_kv
    }

    /// Per-phase power base in kVA.
    pub fn s_base_kva(&self) -> f64 {
        self.base_kva / 3.0
    }

    pub fn z_base_ohm(&self) -> f64 {
        self.base_kv * self.base_kv * 1000.0 / self.base_kva
    }

    pub fn i_base_amp(&self) -> f64 {
        self.s_base_kva() / (self.base_kv / 3f64.sqrt())
    }

    /// Slack voltage magnitude per phase, pu.
    pub fn source_voltage(&self) -> [f64; 3] {
        self.source_v
    }

    /// Slack phasors with nominal 0/-120/+120 degree angles.
    pub fn source_phasors(&self) -> [Complex64; 3] {
        std::array::from_fn(|i| Complex64::from_polar(self.source_v[i], -2.0 * PI / 3.0 * i as f64))
    }

    pub fn with_source_voltage(mut self, v: f64) -> FeederModel {
        self.source_v = [v; 3];
        self
    }


    /// Replaces the DER fleet. DER bus and phase consistency is checked.
    pub fn with_ders(mut self, ders: Vec<Der>) -> Result<FeederModel, FeederError> {
        for d in &ders {
            if d.bus >= self.buses.len() || !d.phases.is_subset(self.buses[d.bus].phases) {
                return Err(FeederError::Phase("DER placed on a missing bus phase".into()));
            }
        }
        let mut ders_at = vec![Vec::new(); self.buses.len()];
        for (k, d) in ders.iter().enumerate() {
            ders_at[d.bus].push(k);
        }
        self.ders = ders;
        self.ders_at = ders_at;
        Ok(self)
    }

    /// Multiplies every bus load by the bus's factor.
    pub fn scale_loads(&self, factor: impl Fn(usize) -> f64) -> FeederModel {
        let mut out = self.clone();
        for (j, bus) in out.buses.iter_mut().enumerate() {
            let f = factor(j);
            for s in bus.load.iter_mut() {
                *s *= f;
            }
        }
        out
    }

    pub fn scale_loads_uniform(&self, factor: f64) -> FeederModel {
        self.scale_loads(|_| factor)
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn bus(&self, j: usize) -> &Bus {
        &self.buses[j]
    }

    pub fn branches(&self) -> &[Branch] {
        &self.branches
    }

    pub fn branch(&self, k: usize) -> &Branch {
        &self.branches[k]
    }

    pub fn ders(&self) -> &[Der] {
        &self.ders
    }

    pub fn ders_at(&self, j: usize) -> &[usize] {
        &self.ders_at[j]
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn n_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn bus_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    /// Branch feeding bus `j`, `None` for the slack.
    pub fn parent_branch(&self, j: usize) -> Option<usize> {
        self.parent_branch[j]
    }

    pub fn parent(&self, j: usize) -> Option<usize> {
        self.parent_branch[j].map(|k| self.branches[k].from)
    }

    pub fn children(&self, j: usize) -> &[usize] {
        &self.children[j]
    }

    /// Buses in breadth-first order from the slack.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    /// Branches leaving bus `j`.
    pub fn out_branches(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        self.children[j].iter().map(move |&c| self.parent_branch[c].unwrap())
    }

    pub fn total_load(&self) -> Complex64 {
        self.buses.iter().flat_map(|b| b.load.iter()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{
        "base_kva": 3000, "base_kv": 4.16,
        "buses": [
            {"id": 1, "phases": "abc", "slack": true},
            {"id": 2, "phases": "abc", "load_kw": [10, 20, 30], "load_kvar": [5, 5, 5]},
            {"id": 3, "phases": "a", "load_kw": [15, null, null], "load_kvar": [7, null, null]}
        ],
        "branches": [
            {"from": 1, "to": 2, "phases": "abc",
             "r_ohm": [[0.1, 0.02, 0.02], [0.02, 0.1, 0.02], [0.02, 0.02, 0.1]],
             "x_ohm": [[0.2, 0.05, 0.05], [0.05, 0.2, 0.05], [0.05, 0.05, 0.2]]},
            {"from": 2, "to": 3, "phases": "a",
             "r_ohm": [[0.3, null, null], [null, null, null], [null, null, null]],
             "x_ohm": [[0.3, null, null], [null, null, null], [null, null, null]]}
        ]
    }"#;

    #[test]
    fn toy_parses_and_converts() {
        let m = FeederModel::from_json_str(TOY).unwrap();
        assert_eq!(m.n_buses(), 3);
        assert_eq!(m.slack(), 0);
        assert_eq!(m.order(), &[0, 1, 2]);
        assert!((m.bus(1).load[0].re - 0.01).abs() < 1e-15);
        assert!((m.z_base_ohm() - 5.768533333333333).abs() < 1e-12);
        assert!((m.branch(0).z[0][0].re - 0.1 / m.z_base_ohm()).abs() < 1e-15);
    }

    #[test]
    fn load_on_absent_phase_is_rejected() {
        let bad = TOY.replace("[15, null, null]", "[15, 3, null]");
        assert!(matches!(FeederModel::from_json_str(&bad), Err(FeederError::Phase(_))));
    }

    #[test]
    fn reversed_branch_is_rejected() {
        let bad = TOY.replace(r#""from": 2, "to": 3"#, r#""from": 3, "to": 2"#);
        assert!(matches!(FeederModel::from_json_str(&bad), Err(FeederError::Orientation { .. })));
    }

    #[test]
    fn bundled_feeder_loads() {
        let m = FeederModel::ieee123();
        assert_eq!(m.n_buses(), 125);
        assert_eq!(m.n_branches(), 124);
        let total = m.total_load() * m.s_base_kva();
        assert!((total.re - 3570.0).abs() < 1e-6);
        assert!((total.im - 1960.0).abs() < 1e-6);
    }
}
