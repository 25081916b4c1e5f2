//! Nonlinear three-phase power flow by forward/backward sweep, plus the
//! residual evaluator for the exact branch-flow equations.

mod dump;
mod residual;

use num_complex::Complex64;
use thiserror::Error;

use crate::feeder::{AreaModel, DerMode, FeederModel};

pub use dump::write_solution_csv;
pub use residual::{evaluate_nl_residuals, ResidualReport};

#[derive(Debug, Error)]
pub enum PowerFlowError {
    #[error("power flow did not converge after {sweeps} sweeps (mismatch {mismatch:.3e} pu)")]
    NonConvergence { sweeps: usize, mismatch: f64 },
    #[error("invalid injection: {0}")]
    InvalidInjection(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy)]
pub struct PowerFlowOptions {
    /// Largest allowed complex power mismatch at any bus phase, pu.
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions {
            tolerance: 1e-8,
            max_sweeps: 100,
        }
    }
}

/// Set-points for every DER of a model, pu per phase.
#[derive(Debug, Clone, PartialEq)]
pub struct DerDispatch {
    pub p: Vec<[f64; 3]>,
    pub q: Vec<[f64; 3]>,
}

impl DerDispatch {
    pub fn zeros(n: usize) -> DerDispatch {
        DerDispatch {
            p: vec![[0.0; 3]; n],
            q: vec![[0.0; 3]; n],
        }
    }

    /// Output without optimization: fixed active power for reactive-dispatch
    /// units, full rating for active-dispatch units, nothing for the rest.
    pub fn no_opf(model: &FeederModel) -> DerDispatch {
        let mut out = DerDispatch::zeros(model.ders().len());
        for (d, der) in model.ders().iter().enumerate() {
            for i in der.phases.indices() {
                out.p[d][i] = match der.mode {
                    DerMode::ReactiveDispatch => der.p_fixed[i],
                    DerMode::ActiveDispatch => der.s_rated[i],
                    DerMode::FullPq => 0.0,
                };
            }
        }
        out
    }

    pub fn total_p(&self) -> f64 {
        self.p.iter().flatten().sum()
    }
}

/// Generation per bus and phase, pu.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionSet {
    gen: Vec<[Complex64; 3]>,
}

impl InjectionSet {
    pub fn none(model: &FeederModel) -> InjectionSet {
        InjectionSet {
            gen: vec![[Complex64::new(0.0, 0.0); 3]; model.n_buses()],
        }
    }

    pub fn from_dispatch(model: &FeederModel, dispatch: &DerDispatch) -> Result<InjectionSet, PowerFlowError> {
        if dispatch.p.len() != model.ders().len() || dispatch.q.len() != model.ders().len() {
            return Err(PowerFlowError::DimensionMismatch(format!(
                "dispatch has {} entries for {} DERs",
                dispatch.p.len(),
                model.ders().len()
            )));
        }
        let mut inj = InjectionSet::none(model);
        for (d, der) in model.ders().iter().enumerate() {
            for i in 0..3 {
                let s = Complex64::new(dispatch.p[d][i], dispatch.q[d][i]);
                if s != Complex64::new(0.0, 0.0) {
                    inj.add(model, der.bus, i, s)?;
                }
            }
        }
        Ok(inj)
    }

    pub fn add(&mut self, model: &FeederModel, bus: usize, phase: usize, s: Complex64) -> Result<(), PowerFlowError> {
        if bus >= self.gen.len() || !model.bus(bus).phases.has(phase) {
            return Err(PowerFlowError::InvalidInjection(format!("bus index {} phase {}", bus, phase)));
        }
        if !(s.re.is_finite() && s.im.is_finite()) {
            return Err(PowerFlowError::InvalidInjection("non-finite value".into()));
        }
        self.gen[bus][phase] += s;
        Ok(())
    }

    pub fn at(&self, bus: usize) -> [Complex64; 3] {
        self.gen[bus]
    }
}

/// Converged state of the network.
#[derive(Debug, Clone)]
pub struct PowerFlowSolution {
    /// Bus voltage phasors, zero on absent phases.
    pub voltage: Vec<[Complex64; 3]>,
    /// Branch current phasors.
    pub current: Vec<[Complex64; 3]>,
    /// Squared voltage magnitudes.
    pub v: Vec<[f64; 3]>,
    /// Sending-end products V_from^p conj(I^q); the diagonal is the branch flow.
    pub s: Vec<[[Complex64; 3]; 3]>,
    /// |I^p| |I^q|.
    pub l: Vec<[[f64; 3]; 3]>,
    /// Current angle of phase q minus that of phase p.
    pub delta: Vec<[[f64; 3]; 3]>,
    /// Load minus generation minus capacitor injection, per bus and phase.
    pub net_demand: Vec<[Complex64; 3]>,
    /// Real part of I^H Z I per branch, pu.
    pub branch_loss: Vec<f64>,
    pub sweeps: usize,
    pub mismatch: f64,
    pub mismatch_history: Vec<f64>,
    pub s_base_kva: f64,
}

impl PowerFlowSolution {
    pub fn flow(&self, branch: usize) -> [Complex64; 3] {
        std::array::from_fn(|p| self.s[branch][p][p])
    }

    pub fn v_mag(&self, bus: usize, phase: usize) -> f64 {
        self.voltage[bus][phase].norm()
    }

    /// Smallest and largest voltage magnitude over existing bus phases.
    pub fn voltage_range(&self, model: &FeederModel) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (j, bus) in model.buses().iter().enumerate() {
            for p in bus.phases.indices() {
                let m = self.v_mag(j, p);
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        (lo, hi)
    }
}

pub fn solve_powerflow(model: &FeederModel, inj: &InjectionSet) -> Result<PowerFlowSolution, PowerFlowError> {
    solve_powerflow_with(model, inj, &PowerFlowOptions::default())
}

pub fn solve_powerflow_with(
    model: &FeederModel,
    inj: &InjectionSet,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let n = model.n_buses();
    if inj.gen.len() != n {
        return Err(PowerFlowError::DimensionMismatch(format!(
            "injection set covers {} buses, feeder has {}",
            inj.gen.len(),
            n
        )));
    }
    let zero = Complex64::new(0.0, 0.0);
    let source = model.source_phasors();
    let mut net = vec![[zero; 3]; n];
    let mut voltage = vec![[zero; 3]; n];
    for (j, bus) in model.buses().iter().enumerate() {
        for p in bus.phases.indices() {
            net[j][p] = bus.load[p] - inj.gen[j][p] - Complex64::new(0.0, bus.shunt_q[p]);
            voltage[j][p] = source[p];
        }
    }

    let order = model.order();
    let mut load_current = vec![[zero; 3]; n];
    let mut bus_current = vec![[zero; 3]; n];
    let mut history = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < opts.max_sweeps {
        sweeps += 1;
        backward(model, &voltage, &net, &mut load_current, &mut bus_current);
        forward(model, &mut voltage, &bus_current);
        let mut mismatch: f64 = 0.0;
        for &j in order {
            if j == model.slack() {
                continue;
            }
            for p in model.bus(j).phases.indices() {
                let s = voltage[j][p] * load_current[j][p].conj();
                mismatch = mismatch.max((s - net[j][p]).norm());
            }
        }
        log::trace!("sweep {} mismatch {:.3e}", sweeps, mismatch);
        history.push(mismatch);
        if !mismatch.is_finite() {
            break;
        }
        if mismatch <= opts.tolerance {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PowerFlowError::NonConvergence {
            sweeps,
            mismatch: history.last().copied().unwrap_or(f64::NAN),
        });
    }
    backward(model, &voltage, &net, &mut load_current, &mut bus_current);

    let nb = model.n_branches();
    let mut current = vec![[zero; 3]; nb];
    let mut s = vec![[[zero; 3]; 3]; nb];
    let mut l = vec![[[0.0; 3]; 3]; nb];
    let mut delta = vec![[[0.0; 3]; 3]; nb];
    let mut branch_loss = vec![0.0; nb];
    for j in 0..n {
        let Some(k) = model.parent_branch(j) else { continue };
        let br = model.branch(k);
        let i = bus_current[j];
        current[k] = i;
        let mut loss = zero;
        for p in br.phases.indices() {
            for q in br.phases.indices() {
                s[k][p][q] = voltage[br.from][p] * i[q].conj();
                l[k][p][q] = i[p].norm() * i[q].norm();
                delta[k][p][q] = i[q].arg() - i[p].arg();
                loss += i[p].conj() * br.z[p][q] * i[q];
            }
        }
        branch_loss[k] = loss.re;
    }
    let v = voltage.iter().map(|vj| vj.map(|x| x.norm_sqr())).collect();
    Ok(PowerFlowSolution {
        voltage,
        current,
        v,
        s,
        l,
        delta,
        net_demand: net,
        branch_loss,
        sweeps,
        mismatch: *history.last().unwrap(),
        mismatch_history: history,
        s_base_kva: model.s_base_kva(),
    })
}

fn backward(
    model: &FeederModel,
    voltage: &[[Complex64; 3]],
    net: &[[Complex64; 3]],
    load_current: &mut [[Complex64; 3]],
    bus_current: &mut [[Complex64; 3]],
) {
    for &j in model.order().iter().rev() {
        let phases = model.bus(j).phases;
        let mut total = [Complex64::new(0.0, 0.0); 3];
        for p in phases.indices() {
            let il = if voltage[j][p].norm() > 0.0 {
                (net[j][p] / voltage[j][p]).conj()
            } else {
                Complex64::new(0.0, 0.0)
            };
            load_current[j][p] = il;
            total[p] = il;
        }
        for &c in model.children(j) {
            for p in model.bus(c).phases.indices() {
                total[p] += bus_current[c][p];
            }
        }
        bus_current[j] = total;
    }
}

fn forward(model: &FeederModel, voltage: &mut [[Complex64; 3]], bus_current: &[[Complex64; 3]]) {
    for &j in model.order() {
        let Some(k) = model.parent_branch(j) else { continue };
        let br = model.branch(k);
        let i = bus_current[j];
        for p in br.phases.indices() {
            let mut drop = Complex64::new(0.0, 0.0);
            for q in br.phases.indices() {
                drop += br.z[p][q] * i[q];
            }
            voltage[j][p] = voltage[br.from][p] - drop;
        }
    }
}

/// Total series loss in kW.
pub fn total_loss(sol: &PowerFlowSolution) -> f64 {
    sol.branch_loss.iter().sum::<f64>() * sol.s_base_kva
}

/// Values an area reports to its neighbours, read from the area's own solution.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryObservables {
    /// Power entering the area at its head bus, pu per phase.
    pub head_injection: [Complex64; 3],
    /// Squared voltage at each child interface, in `Area::down` order.
    pub child_voltages: Vec<[f64; 3]>,
}

/// Reads boundary values from a solution of `area.model`.
pub fn extract_boundary(sol: &PowerFlowSolution, area: &AreaModel) -> Result<BoundaryObservables, PowerFlowError> {
    let m = &area.model;
    if sol.v.len() != m.n_buses() || sol.s.len() != m.n_branches() {
        return Err(PowerFlowError::DimensionMismatch("solution does not belong to this area".into()));
    }
    let head = m.slack();
    let mut inj = sol.net_demand[head];
    for k in m.out_branches(head) {
        let f = sol.flow(k);
        for p in 0..3 {
            inj[p] += f[p];
        }
    }
    let child_voltages = area.ghosts.iter().map(|&(g, _)| sol.v[g]).collect();
    Ok(BoundaryObservables {
        head_injection: inj,
        child_voltages,
    })
}
