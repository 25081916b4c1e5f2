//! The sparse QP/LP solver on a small hand-written problem.

use dopf::solver::{project_disc, solve_lp, solve_qp, CscMatrix, QpProblem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // min (x - 1)^2 + (y - 2)^2  s.t.  x + y = 2, x <= 0.8
    let mut qp = QpProblem::new(2);
    qp.hessian = CscMatrix::from_dense(&[vec![2.0, 0.0], vec![0.0, 2.0]]);
    qp.linear = vec![-2.0, -4.0];
    qp.eq = CscMatrix::from_dense(&[vec![1.0, 1.0]]);
    qp.eq_rhs = vec![2.0];
    qp.ineq = CscMatrix::from_dense(&[vec![1.0, 0.0]]);
    qp.ineq_rhs = vec![0.8];
    let sol = solve_qp(&qp)?;
    println!("qp {:?}: x = {:.6?}, {} iterations", sol.status, sol.x, sol.iterations);

    // max x + 2y  s.t.  x + y <= 4, x + 3y <= 6, x, y >= 0
    let mut lp = QpProblem::new(2);
    lp.linear = vec![-1.0, -2.0];
    lp.ineq = CscMatrix::from_dense(&[vec![1.0, 1.0], vec![1.0, 3.0]]);
    lp.ineq_rhs = vec![4.0, 6.0];
    lp.lower = vec![0.0, 0.0];
    let sol = solve_lp(&lp)?;
    println!("lp {:?}: x = {:.6?}, objective {:.6}", sol.status, sol.x, sol.objective);

    println!("disc projection of (3, 4) onto radius 1: {:?}", project_disc(3.0, 4.0, 1.0));
    Ok(())
}
