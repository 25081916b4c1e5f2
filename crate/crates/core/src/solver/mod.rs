//! Convex QP/LP solver: operator splitting (ADMM) on a quasi-definite KKT
//! system, with box and disc constraint sets, infeasibility detection and a
//! solution polishing step.

mod admm;
mod ipm;
mod ldl;
mod sparse;

pub use admm::solve_with;
pub use ldl::{minimum_degree_order, LdlError, LdlFactor};
pub use sparse::CscMatrix;

use serde::{Deserialize, Serialize};

/// Constraint (x[a], x[b]) inside the disc of the given radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disc {
    pub a: usize,
    pub b: usize,
    pub radius: f64,
}

/// minimize 1/2 x'Hx + f'x subject to
/// eq x = eq_rhs, ineq x <= ineq_rhs, lower <= x <= upper, and discs.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: CscMatrix,
    pub linear: Vec<f64>,
    pub eq: CscMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq: CscMatrix,
    pub ineq_rhs: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub discs: Vec<Disc>,
}

impl QpProblem {
    /// Unconstrained problem in `n` variables with zero cost.
    pub fn new(n: usize) -> QpProblem {
        QpProblem {
            hessian: CscMatrix::zeros(n, n),
            linear: vec![0.0; n],
            eq: CscMatrix::zeros(0, n),
            eq_rhs: Vec::new(),
            ineq: CscMatrix::zeros(0, n),
            ineq_rhs: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            discs: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut hx = vec![0.0; self.n()];
        self.hessian.mul_vec(x, &mut hx);
        x.iter()
            .zip(&hx)
            .zip(&self.linear)
            .map(|((x, h), f)| 0.5 * x * h + f * x)
            .sum()
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.n();
        let h = &self.hessian;
        if h.nrows != n || h.ncols != n {
            return Err(SolverError::Dimension("hessian must be n x n".into()));
        }
        if !h.is_symmetric(1e-12 * (1.0 + sparse::inf_norm(&h.values))) {
            return Err(SolverError::Dimension("hessian must be symmetric".into()));
        }
        if self.eq.ncols != n || self.eq.nrows != self.eq_rhs.len() {
            return Err(SolverError::Dimension("equality block shape".into()));
        }
        if self.ineq.ncols != n || self.ineq.nrows != self.ineq_rhs.len() {
            return Err(SolverError::Dimension("inequality block shape".into()));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension("bound vectors".into()));
        }
        for d in &self.discs {
            if d.a >= n || d.b >= n || d.a == d.b || !(d.radius >= 0.0) {
                return Err(SolverError::Dimension("disc references".into()));
            }
        }
        let finite = self.linear.iter().chain(&self.eq_rhs).chain(&self.ineq_rhs).all(|v| v.is_finite());
        if !finite || self.lower.iter().zip(&self.upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(SolverError::Dimension("non-finite data or crossed bounds".into()));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error("malformed problem: {0}")]
    Dimension(String),
    #[error("KKT factorization failed: {0}")]
    Factorization(#[from] LdlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    MaxIter,
    PrimalInfeasible,
    DualInfeasible,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSettings {
    pub rho: f64,
    /// Multiplier applied to the step size on equality rows.
    pub rho_eq_scale: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_prim_inf: f64,
    pub eps_dual_inf: f64,
    pub max_iter: usize,
    pub scaling_iters: usize,
    pub check_every: usize,
    pub adaptive_rho: bool,
    pub polish: bool,
    /// Weight of the quadratic regularizer used when solving LPs.
    pub lp_regularization: f64,
    /// Retry with the interior point method when ADMM runs out of iterations
    /// on a problem without discs.
    pub interior_point_fallback: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        SolverSettings {
            rho: 0.1,
            rho_eq_scale: 1e3,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-6,
            eps_dual_inf: 1e-6,
            max_iter: 20000,
            scaling_iters: 10,
            check_every: 5,
            adaptive_rho: true,
            polish: true,
            lp_regularization: LP_REGULARIZATION,
            interior_point_fallback: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QpSolution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    /// Multipliers for equality rows, inequality rows, then bounded variables.
    pub y: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub polished: bool,
    /// Solution came from the interior point fallback.
    pub interior_point: bool,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution, SolverError> {
    solve_with(problem, &SolverSettings::default(), None)
}

/// Default weight of the quadratic regularizer used when solving LPs.
pub const LP_REGULARIZATION: f64 = 1e-6;

/// Solves an LP (the Hessian of `problem` is ignored) as a QP with a small
/// proximal term. The reported objective is the linear cost.
pub fn solve_lp(problem: &QpProblem) -> Result<QpSolution, SolverError> {
    solve_lp_with(problem, &SolverSettings::default())
}

pub fn solve_lp_with(problem: &QpProblem, settings: &SolverSettings) -> Result<QpSolution, SolverError> {
    solve_lp_warm(problem, settings, None)
}

/// As [`solve_lp_with`], starting from a previous primal/dual pair.
pub fn solve_lp_warm(
    problem: &QpProblem,
    settings: &SolverSettings,
    warm: Option<(&[f64], &[f64])>,
) -> Result<QpSolution, SolverError> {
    let n = problem.n();
    let mut qp = problem.clone();
    qp.hessian = CscMatrix::diagonal(&vec![settings.lp_regularization; n]);
    let mut sol = admm::solve_inner(&qp, settings, warm, true)?;
    sol.objective = problem.linear.iter().zip(&sol.x).map(|(c, x)| c * x).sum();
    Ok(sol)
}

/// Euclidean projection of (a, b) onto the disc of radius r centred at 0.
pub fn project_disc(a: f64, b: f64, r: f64) -> (f64, f64) {
    let norm = a.hypot(b);
    if norm <= r {
        (a, b)
    } else if norm == 0.0 {
        (0.0, 0.0)
    } else {
        (a * r / norm, b * r / norm)
    }
}
