//! Local and centralized linear OPF solves, with optional projection of the
//! dispatch through the nonlinear twin.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feeder::{AreaModel, FeederModel};
use crate::linear::{check_der_modes, LinearError, LinearOpfProblem, LinearState, ObjectiveKind};
use crate::powerflow::{
    extract_boundary, solve_powerflow_with, total_loss, BoundaryObservables, DerDispatch, InjectionSet,
    PowerFlowError, PowerFlowOptions, PowerFlowSolution,
};
use crate::solver::{solve_lp_warm, solve_with, CscMatrix, SolveStatus, SolverError, SolverSettings};

#[derive(Debug, Error)]
pub enum OpfError {
    #[error("area {area}: linear OPF is {status:?}")]
    NotSolved { area: String, status: SolveStatus },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Incompatible(#[from] LinearError),
    #[error("twin projection failed: {0}")]
    PowerFlow(#[from] PowerFlowError),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct OpfSettings {
    pub solver: SolverSettings,
    #[serde(default = "default_pf_tolerance")]
    pub twin_tolerance: f64,
}

fn default_pf_tolerance() -> f64 {
    PowerFlowOptions::default().tolerance
}

impl OpfSettings {
    fn pf(&self) -> PowerFlowOptions {
        PowerFlowOptions {
            tolerance: if self.twin_tolerance > 0.0 {
                self.twin_tolerance
            } else {
                PowerFlowOptions::default().tolerance
            },
            ..PowerFlowOptions::default()
        }
    }
}

/// Result of one area solve.
#[derive(Debug, Clone)]
pub struct LocalSolution {
    pub area: usize,
    pub kind: ObjectiveKind,
    /// Full decision vector.
    pub x: Vec<f64>,
    /// Dual vector returned by the solver, for warm starts.
    pub y: Vec<f64>,
    /// DER decision values in variable-map order.
    pub z_star: Vec<f64>,
    /// Set-points of the area's DERs, fixed parts included.
    pub dispatch: DerDispatch,
    pub linear: LinearState,
    pub twin: Option<PowerFlowSolution>,
    /// Loss in kW or generation in kW according to `kind`, from the linear model.
    pub objective_linear: f64,
    /// Same quantity evaluated on the twin, when projected.
    pub objective_twin: Option<f64>,
    /// Boundary values to report: from the twin when projected.
    pub boundary: BoundaryObservables,
    pub solver_iterations: usize,
    /// Came from [`solve_elastic`]; voltage limits may be exceeded.
    pub relaxed: bool,
}

/// Runs the nonlinear twin of an area under the given DER dispatch.
pub fn project_through_twin(
    area: &AreaModel,
    dispatch: &DerDispatch,
    opts: &PowerFlowOptions,
) -> Result<PowerFlowSolution, PowerFlowError> {
    let inj = InjectionSet::from_dispatch(&area.model, dispatch)?;
    solve_powerflow_with(&area.model, &inj, opts)
}

fn linear_boundary(area: &AreaModel, state: &LinearState, dispatch: &DerDispatch) -> BoundaryObservables {
    BoundaryObservables {
        head_injection: state.head_injection(&area.model, dispatch),
        child_voltages: area.ghosts.iter().map(|&(g, _)| state.v[g]).collect(),
    }
}

/// Solves the linear OPF of one area and optionally projects the result
/// through the twin.
pub fn solve_local_subproblem(
    area: AreaModel,
    kind: ObjectiveKind,
    project: bool,
    settings: &OpfSettings,
    warm: Option<(&[f64], &[f64])>,
) -> Result<LocalSolution, OpfError> {
    check_der_modes(&area.model, kind)?;
    let problem = LinearOpfProblem::build(area, kind);
    finish(problem, project, settings, warm, false)
}

/// Weight on voltage-limit slack in [`solve_elastic`].
pub const ELASTIC_PENALTY: f64 = 1e4;

/// Local OPF with every voltage limit softened by a nonnegative slack priced
/// at [`ELASTIC_PENALTY`]. Gives the least-violating set-points of an area
/// whose own OPF is infeasible.
pub fn solve_elastic(
    area: AreaModel,
    kind: ObjectiveKind,
    project: bool,
    settings: &OpfSettings,
) -> Result<LocalSolution, OpfError> {
    check_der_modes(&area.model, kind)?;
    let mut problem = LinearOpfProblem::build(area, kind);
    let qp = &mut problem.qp;
    let n = qp.n();
    let m = qp.ineq_rhs.len();
    let widen = |a: &CscMatrix, extra: &[(usize, usize, f64)]| {
        let mut t: Vec<_> = a.triplets().collect();
        t.extend_from_slice(extra);
        CscMatrix::from_triplets(a.nrows, n + m, &t)
    };
    let slack: Vec<_> = (0..m).map(|r| (r, n + r, -1.0)).collect();
    qp.hessian = CscMatrix::from_triplets(n + m, n + m, &qp.hessian.triplets().collect::<Vec<_>>());
    qp.eq = widen(&qp.eq, &[]);
    qp.ineq = widen(&qp.ineq, &slack);
    qp.linear.extend(std::iter::repeat(ELASTIC_PENALTY).take(m));
    qp.lower.extend(std::iter::repeat(0.0).take(m));
    qp.upper.extend(std::iter::repeat(f64::INFINITY).take(m));
    finish(problem, project, settings, None, true)
}

fn finish(
    problem: LinearOpfProblem,
    project: bool,
    settings: &OpfSettings,
    warm: Option<(&[f64], &[f64])>,
    relaxed: bool,
) -> Result<LocalSolution, OpfError> {
    let kind = problem.kind;
    let sol = if problem.is_lp() {
        solve_lp_warm(&problem.qp, &settings.solver, warm)?
    } else {
        solve_with(&problem.qp, &settings.solver, warm)?
    };
    if sol.status != SolveStatus::Optimal {
        return Err(OpfError::NotSolved {
            area: problem.area.model.bus(problem.area.model.slack()).id.clone(),
            status: sol.status,
        });
    }
    let area = &problem.area;
    let model = &area.model;
    let dispatch = problem.map.dispatch(model, &sol.x);
    let linear = problem.state(&sol.x);
    let objective_linear = match kind {
        ObjectiveKind::LossMin => linear.implied_loss(model),
        ObjectiveKind::DerMax => dispatch.total_p() * model.s_base_kva(),
    };
    let (twin, objective_twin, boundary) = if project {
        let pf = project_through_twin(area, &dispatch, &settings.pf())?;
        let obj = match kind {
            ObjectiveKind::LossMin => total_loss(&pf),
            ObjectiveKind::DerMax => dispatch.total_p() * model.s_base_kva(),
        };
        let b = extract_boundary(&pf, area)?;
        (Some(pf), Some(obj), b)
    } else {
        let b = linear_boundary(area, &linear, &dispatch);
        (None, None, b)
    };
    Ok(LocalSolution {
        area: area.area,
        kind,
        z_star: problem.map.der_values(&sol.x),
        x: sol.x,
        y: sol.y,
        dispatch,
        linear,
        twin,
        objective_linear,
        objective_twin,
        boundary,
        solver_iterations: sol.iterations,
        relaxed,
    })
}

/// Whole-feeder linear OPF as a single area.
pub fn solve_central_linear(
    model: &FeederModel,
    kind: ObjectiveKind,
    project: bool,
    settings: &OpfSettings,
) -> Result<LocalSolution, OpfError> {
    solve_local_subproblem(AreaModel::whole(model), kind, project, settings, None)
}

/// Physical evaluation of a full-feeder dispatch: the twin solution and the
/// objective value (loss in kW, or generation in kW).
pub fn replay_dispatch(
    model: &FeederModel,
    dispatch: &DerDispatch,
    kind: ObjectiveKind,
) -> Result<(PowerFlowSolution, f64), PowerFlowError> {
    let inj = InjectionSet::from_dispatch(model, dispatch)?;
    let sol = solve_powerflow_with(model, &inj, &PowerFlowOptions::default())?;
    let obj = match kind {
        ObjectiveKind::LossMin => total_loss(&sol),
        ObjectiveKind::DerMax => dispatch.total_p() * model.s_base_kva(),
    };
    Ok((sol, obj))
}

/// Largest violation of any bus voltage limit, pu of magnitude, and the
/// number of bus phases above their upper limit by more than `tol`.
pub fn voltage_violations(model: &FeederModel, sol: &PowerFlowSolution, tol: f64) -> (f64, usize, usize) {
    let mut worst: f64 = 0.0;
    let mut over = 0;
    let mut under = 0;
    for (j, bus) in model.buses().iter().enumerate() {
        for p in bus.phases.indices() {
            let m = sol.voltage[j][p].norm();
            let hi = m - bus.v_max;
            let lo = bus.v_min - m;
            worst = worst.max(hi).max(lo);
            if hi > tol {
                over += 1;
            }
            if lo > tol {
                under += 1;
            }
        }
    }
    (worst.max(0.0), over, under)
}

