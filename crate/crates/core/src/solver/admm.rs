use super::ldl::LdlFactor;
use super::sparse::{inf_norm, CscMatrix};
use super::{project_disc, QpProblem, QpSolution, SolveStatus, SolverError, SolverSettings};

const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const ADAPT_EVERY: usize = 50;
const POLISH_DELTA: f64 = 1e-6;
const POLISH_REFINE: usize = 3;
const POLISH_EVERY: usize = 250;
const POLISH_ROUNDS: usize = 4;
const POLISH_FEAS_TOL: f64 = 1e-9;
pub(super) const INF: f64 = 1e20;

/// Problem in the form  min 1/2 x'Px + q'x  s.t.  Cx in box [l, u] x discs.
pub(super) struct Stacked {
    pub(super) p: CscMatrix,
    pub(super) q: Vec<f64>,
    pub(super) c: CscMatrix,
    pub(super) l: Vec<f64>,
    pub(super) u: Vec<f64>,
    /// (row a, row b, radius)
    pub(super) discs: Vec<(usize, usize, f64)>,
    in_disc: Vec<bool>,
}

impl Stacked {
    fn from_problem(pr: &QpProblem) -> Stacked {
        let n = pr.n();
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        let mut l = Vec::new();
        let mut u = Vec::new();
        let mut row = 0;
        for (i, j, v) in pr.eq.triplets() {
            t.push((row + i, j, v));
        }
        row += pr.eq.nrows;
        l.extend_from_slice(&pr.eq_rhs);
        u.extend_from_slice(&pr.eq_rhs);
        for (i, j, v) in pr.ineq.triplets() {
            t.push((row + i, j, v));
        }
        row += pr.ineq.nrows;
        l.extend(std::iter::repeat(-INF).take(pr.ineq.nrows));
        u.extend(pr.ineq_rhs.iter().map(|&h| h.min(INF)));
        for j in 0..n {
            if pr.lower[j].is_finite() || pr.upper[j].is_finite() {
                t.push((row, j, 1.0));
                l.push(pr.lower[j].max(-INF));
                u.push(pr.upper[j].min(INF));
                row += 1;
            }
        }
        let mut discs = Vec::new();
        for d in &pr.discs {
            t.push((row, d.a, 1.0));
            t.push((row + 1, d.b, 1.0));
            l.extend([-INF, -INF]);
            u.extend([INF, INF]);
            discs.push((row, row + 1, d.radius));
            row += 2;
        }
        let mut in_disc = vec![false; row];
        for &(a, b, _) in &discs {
            in_disc[a] = true;
            in_disc[b] = true;
        }
        let p = if pr.hessian.triplets().all(|(i, j, _)| i <= j) && pr.hessian.triplets().any(|(i, j, _)| i < j) {
            pr.hessian.symmetrize_from_triangle()
        } else {
            pr.hessian.clone()
        };
        Stacked {
            p,
            q: pr.linear.clone(),
            c: CscMatrix::from_triplets(row, n, &t),
            l,
            u,
            discs,
            in_disc,
        }
    }

    pub(super) fn n(&self) -> usize {
        self.q.len()
    }

    pub(super) fn m(&self) -> usize {
        self.l.len()
    }

    fn project(&self, z: &mut [f64]) {
        for i in 0..z.len() {
            if !self.in_disc[i] {
                z[i] = z[i].clamp(self.l[i], self.u[i]);
            }
        }
        for &(a, b, r) in &self.discs {
            let (x, y) = project_disc(z[a], z[b], r);
            z[a] = x;
            z[b] = y;
        }
    }
}

fn limit(v: f64) -> f64 {
    if v < MIN_SCALING {
        1.0
    } else {
        v.min(MAX_SCALING)
    }
}

/// Ruiz equilibration. Returns (D, E, c) with the data scaled in place.
fn equilibrate(s: &mut Stacked, iters: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let (n, m) = (s.n(), s.m());
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut cost = 1.0;
    for _ in 0..iters {
        let pn = s.p.col_inf_norms();
        let cn = s.c.col_inf_norms();
        let dt: Vec<f64> = (0..n).map(|j| 1.0 / limit(pn[j].max(cn[j])).sqrt()).collect();
        let rn = s.c.row_inf_norms();
        let mut et: Vec<f64> = rn.iter().map(|&r| 1.0 / limit(r).sqrt()).collect();
        for &(a, b, _) in &s.discs {
            let g = (et[a] * et[b]).sqrt();
            et[a] = g;
            et[b] = g;
        }
        s.p.scale(&dt, &dt);
        s.c.scale(&et, &dt);
        for j in 0..n {
            s.q[j] *= dt[j];
            d[j] *= dt[j];
        }
        for i in 0..m {
            e[i] *= et[i];
        }
        let pn = s.p.col_inf_norms();
        let mean = if n > 0 { pn.iter().sum::<f64>() / n as f64 } else { 0.0 };
        let ct = 1.0 / limit(mean.max(inf_norm(&s.q)));
        s.p.values.iter_mut().for_each(|v| *v *= ct);
        s.q.iter_mut().for_each(|v| *v *= ct);
        cost *= ct;
    }
    for i in 0..m {
        if s.l[i] > -INF {
            s.l[i] *= e[i];
        }
        if s.u[i] < INF {
            s.u[i] *= e[i];
        }
    }
    for disc in s.discs.iter_mut() {
        disc.2 *= e[disc.0];
    }
    (d, e, cost)
}

fn kkt_upper(p: &CscMatrix, c: &CscMatrix, sigma: f64, rho: &[f64]) -> CscMatrix {
    let n = p.ncols;
    let m = c.nrows;
    let mut t = Vec::with_capacity(p.nnz() + c.nnz() + n + m);
    for (i, j, v) in p.triplets() {
        if i <= j {
            t.push((i, j, v));
        }
    }
    for j in 0..n {
        t.push((j, j, sigma));
    }
    for (i, j, v) in c.triplets() {
        t.push((j, n + i, v));
    }
    for i in 0..m {
        t.push((n + i, n + i, -1.0 / rho[i]));
    }
    CscMatrix::from_triplets(n + m, n + m, &t)
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
}

struct Unscale<'a> {
    d: &'a [f64],
    e: &'a [f64],
    cost: f64,
}

impl Unscale<'_> {
    fn residuals(&self, s: &Stacked, x: &[f64], z: &[f64], y: &[f64], set: &SolverSettings) -> Residuals {
        let (n, m) = (s.n(), s.m());
        let mut cx = vec![0.0; m];
        s.c.mul_vec(x, &mut cx);
        let mut px = vec![0.0; n];
        s.p.mul_vec(x, &mut px);
        let mut cty = vec![0.0; n];
        s.c.tmul_vec(y, &mut cty);
        let mut prim: f64 = 0.0;
        let mut ncx: f64 = 0.0;
        let mut nz: f64 = 0.0;
        for i in 0..m {
            let ei = 1.0 / self.e[i];
            prim = prim.max(((cx[i] - z[i]) * ei).abs());
            ncx = ncx.max((cx[i] * ei).abs());
            nz = nz.max((z[i] * ei).abs());
        }
        let mut dual: f64 = 0.0;
        let mut npx: f64 = 0.0;
        let mut ncty: f64 = 0.0;
        let mut nq: f64 = 0.0;
        for j in 0..n {
            let dj = 1.0 / (self.d[j] * self.cost);
            dual = dual.max(((px[j] + s.q[j] + cty[j]) * dj).abs());
            npx = npx.max((px[j] * dj).abs());
            ncty = ncty.max((cty[j] * dj).abs());
            nq = nq.max((s.q[j] * dj).abs());
        }
        Residuals {
            prim,
            dual,
            eps_prim: set.eps_abs + set.eps_rel * ncx.max(nz),
            eps_dual: set.eps_abs + set.eps_rel * npx.max(ncty).max(nq),
        }
    }

    fn primal_infeasible(&self, s: &Stacked, dy: &[f64], eps: f64) -> bool {
        let m = s.m();
        let mut w: Vec<f64> = (0..m).map(|i| dy[i] * self.e[i]).collect();
        for i in 0..m {
            if !s.in_disc[i] {
                if s.u[i] >= INF && w[i] > 0.0 || s.l[i] <= -INF && w[i] < 0.0 {
                    w[i] = 0.0;
                }
            }
        }
        let norm = inf_norm(&w);
        if norm < 1e-30 {
            return false;
        }
        w.iter_mut().for_each(|v| *v /= norm);
        // support function of the constraint set at w, unscaled data
        let mut support = 0.0;
        for i in 0..m {
            if s.in_disc[i] {
                continue;
            }
            let (l, u) = (s.l[i] / self.e[i], s.u[i] / self.e[i]);
            if w[i] > 0.0 {
                support += u * w[i];
            } else if w[i] < 0.0 {
                support += l * w[i];
            }
        }
        for &(a, b, r) in &s.discs {
            support += r / self.e[a] * w[a].hypot(w[b]);
        }
        if support >= -eps {
            return false;
        }
        // C^T w in unscaled terms is D^-1 Cbar^T (E^-1 w)
        let scaled: Vec<f64> = (0..m).map(|i| w[i] / self.e[i]).collect();
        let mut ctw = vec![0.0; s.n()];
        s.c.tmul_vec(&scaled, &mut ctw);
        (0..s.n()).all(|j| (ctw[j] / self.d[j]).abs() <= eps)
    }

    fn dual_infeasible(&self, s: &Stacked, dx: &[f64], eps: f64) -> bool {
        let n = s.n();
        let w: Vec<f64> = (0..n).map(|j| dx[j] * self.d[j]).collect();
        let norm = inf_norm(&w);
        if norm < 1e-30 {
            return false;
        }
        let unit: Vec<f64> = dx.iter().map(|v| v / norm).collect();
        let qdx: f64 = (0..n).map(|j| s.q[j] * unit[j]).sum::<f64>() / self.cost;
        if qdx >= -eps {
            return false;
        }
        let mut pdx = vec![0.0; n];
        s.p.mul_vec(&unit, &mut pdx);
        if (0..n).any(|j| (pdx[j] / (self.d[j] * self.cost)).abs() > eps) {
            return false;
        }
        let mut cdx = vec![0.0; s.m()];
        s.c.mul_vec(&unit, &mut cdx);
        (0..s.m()).all(|i| {
            let v = cdx[i] / self.e[i];
            if s.in_disc[i] {
                v.abs() <= eps
            } else {
                (s.u[i] >= INF || v <= eps) && (s.l[i] <= -INF || v >= -eps)
            }
        })
    }
}

fn rho_vector(s: &Stacked, rho: f64, eq_scale: f64) -> Vec<f64> {
    (0..s.m())
        .map(|i| {
            if s.in_disc[i] {
                rho
            } else if s.l[i] <= -INF && s.u[i] >= INF {
                RHO_MIN
            } else if (s.u[i] - s.l[i]).abs() < 1e-12 * (1.0 + s.u[i].abs()) {
                (rho * eq_scale).min(RHO_MAX)
            } else {
                rho
            }
        })
        .collect()
}

/// Solves `problem`, optionally warm-started from an unscaled (x, y) pair.
pub fn solve_with(
    problem: &QpProblem,
    set: &SolverSettings,
    warm: Option<(&[f64], &[f64])>,
) -> Result<QpSolution, SolverError> {
    solve_inner(problem, set, warm, false)
}

/// As [`solve_with`]; with `refine` set, an optimal but unpolished result is
/// also handed to the interior point method.
pub(super) fn solve_inner(
    problem: &QpProblem,
    set: &SolverSettings,
    warm: Option<(&[f64], &[f64])>,
    refine: bool,
) -> Result<QpSolution, SolverError> {
    problem.validate()?;
    let mut s = Stacked::from_problem(problem);
    let (d, e, cost) = equilibrate(&mut s, set.scaling_iters);
    let un = Unscale { d: &d, e: &e, cost };
    let (n, m) = (s.n(), s.m());

    let mut rho = set.rho;
    let mut rho_vec = rho_vector(&s, rho, set.rho_eq_scale);
    let mut kkt = kkt_upper(&s.p, &s.c, set.sigma, &rho_vec);
    let mut factor = LdlFactor::new(&kkt)?;

    let mut x = vec![0.0; n];
    let mut y = vec![0.0; m];
    if let Some((wx, wy)) = warm {
        if wx.len() == n && wy.len() == m {
            for j in 0..n {
                x[j] = wx[j] / d[j];
            }
            for i in 0..m {
                y[i] = wy[i] * cost / e[i];
            }
        }
    }
    let mut z = vec![0.0; m];
    s.c.mul_vec(&x, &mut z);
    s.project(&mut z);

    let mut rhs = vec![0.0; n + m];
    let mut xt = vec![0.0; n];
    let mut zt = vec![0.0; m];
    let mut x_prev = x.clone();
    let mut y_prev = y.clone();
    let mut status = SolveStatus::MaxIter;
    let mut iterations = set.max_iter;
    let mut res = un.residuals(&s, &x, &z, &y, set);
    let every = set.check_every.max(1);
    let mut early_polish = false;

    for k in 1..=set.max_iter {
        x_prev.copy_from_slice(&x);
        y_prev.copy_from_slice(&y);
        for j in 0..n {
            rhs[j] = set.sigma * x[j] - s.q[j];
        }
        for i in 0..m {
            rhs[n + i] = z[i] - y[i] / rho_vec[i];
        }
        factor.solve(&mut rhs);
        xt.copy_from_slice(&rhs[..n]);
        for i in 0..m {
            zt[i] = z[i] + (rhs[n + i] - y[i]) / rho_vec[i];
        }
        for j in 0..n {
            x[j] = set.alpha * xt[j] + (1.0 - set.alpha) * x[j];
        }
        let mut z_relaxed = vec![0.0; m];
        for i in 0..m {
            z_relaxed[i] = set.alpha * zt[i] + (1.0 - set.alpha) * z[i];
            z[i] = z_relaxed[i] + y[i] / rho_vec[i];
        }
        s.project(&mut z);
        for i in 0..m {
            y[i] += rho_vec[i] * (z_relaxed[i] - z[i]);
        }

        if k % every != 0 && k != set.max_iter {
            continue;
        }
        res = un.residuals(&s, &x, &z, &y, set);
        if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
            status = SolveStatus::Optimal;
            iterations = k;
            break;
        }
        if set.polish && s.discs.is_empty() && k % POLISH_EVERY == 0 {
            if let Some((xp, zp, yp)) = polish(&s, &z, &y) {
                let rp = un.residuals(&s, &xp, &zp, &yp, set);
                if rp.prim <= rp.eps_prim && rp.dual <= rp.eps_dual {
                    log::trace!("iteration {}: early polish accepted", k);
                    x = xp;
                    y = yp;
                    res = rp;
                    status = SolveStatus::Optimal;
                    iterations = k;
                    early_polish = true;
                    break;
                }
            }
        }
        let dy: Vec<f64> = (0..m).map(|i| y[i] - y_prev[i]).collect();
        if un.primal_infeasible(&s, &dy, set.eps_prim_inf) {
            status = SolveStatus::PrimalInfeasible;
            iterations = k;
            break;
        }
        let dx: Vec<f64> = (0..n).map(|j| x[j] - x_prev[j]).collect();
        if un.dual_infeasible(&s, &dx, set.eps_dual_inf) {
            status = SolveStatus::DualInfeasible;
            iterations = k;
            break;
        }
        if set.adaptive_rho && k % ADAPT_EVERY == 0 {
            let new_rho = adapt_rho(&s, &x, &z, &y, rho);
            if new_rho > 5.0 * rho || new_rho < rho / 5.0 {
                log::trace!("iteration {}: rho {:.3e} -> {:.3e}", k, rho, new_rho);
                rho = new_rho;
                rho_vec = rho_vector(&s, rho, set.rho_eq_scale);
                kkt = kkt_upper(&s.p, &s.c, set.sigma, &rho_vec);
                factor.refactor(&kkt)?;
            }
        }
    }

    let mut polished = early_polish;
    if status == SolveStatus::Optimal && !early_polish && set.polish && s.discs.is_empty() {
        if let Some((xp, zp, yp)) = polish(&s, &z, &y) {
            let rp = un.residuals(&s, &xp, &zp, &yp, set);
            if rp.prim <= res.eps_prim.max(res.prim) && rp.dual <= res.eps_dual.max(res.dual) {
                x = xp;
                y = yp;
                res = rp;
                polished = true;
            }
        }
    }

    let mut interior_point = false;
    let retry = status == SolveStatus::MaxIter || refine && status == SolveStatus::Optimal && !polished;
    if retry && set.interior_point_fallback && s.discs.is_empty() {
        if let Some((xi, yi)) = super::ipm::solve(&s) {
            let mut zi = vec![0.0; m];
            s.c.mul_vec(&xi, &mut zi);
            s.project(&mut zi);
            let ri = un.residuals(&s, &xi, &zi, &yi, set);
            log::debug!("interior point fallback: prim={:.2e} dual={:.2e}", ri.prim, ri.dual);
            if ri.prim <= ri.eps_prim && ri.dual <= ri.eps_dual {
                x = xi;
                y = yi;
                res = ri;
                status = SolveStatus::Optimal;
                interior_point = true;
            }
        }
    }

    let x_out: Vec<f64> = (0..n).map(|j| x[j] * d[j]).collect();
    let y_out: Vec<f64> = (0..m).map(|i| y[i] * e[i] / cost).collect();
    let objective = problem.objective(&x_out);
    log::debug!(
        "qp n={} m={} status={:?} iter={} prim={:.2e} dual={:.2e} polished={} interior_point={}",
        n,
        m,
        status,
        iterations,
        res.prim,
        res.dual,
        polished,
        interior_point
    );
    Ok(QpSolution {
        status,
        x: x_out,
        y: y_out,
        objective,
        iterations,
        primal_residual: res.prim,
        dual_residual: res.dual,
        polished,
        interior_point,
    })
}

fn adapt_rho(s: &Stacked, x: &[f64], z: &[f64], y: &[f64], rho: f64) -> f64 {
    let (n, m) = (s.n(), s.m());
    let mut cx = vec![0.0; m];
    s.c.mul_vec(x, &mut cx);
    let mut px = vec![0.0; n];
    s.p.mul_vec(x, &mut px);
    let mut cty = vec![0.0; n];
    s.c.tmul_vec(y, &mut cty);
    let prim = (0..m).fold(0.0f64, |a, i| a.max((cx[i] - z[i]).abs()));
    let dual = (0..n).fold(0.0f64, |a, j| a.max((px[j] + s.q[j] + cty[j]).abs()));
    let prim_norm = inf_norm(&cx).max(inf_norm(z)).max(1e-30);
    let dual_norm = inf_norm(&px).max(inf_norm(&cty)).max(inf_norm(&s.q)).max(1e-30);
    let ratio = (prim / prim_norm) / (dual / dual_norm).max(1e-30);
    (rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX)
}

/// Solves the equality-constrained QP on a guessed active set, then updates
/// the guess (drop rows whose multiplier has the wrong sign, add violated
/// rows) until it settles.
fn polish(s: &Stacked, z: &[f64], y: &[f64]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let m = s.m();
    let is_eq = |i: usize| (s.u[i] - s.l[i]).abs() <= 1e-12 * (1.0 + s.u[i].abs());
    let mut side = vec![0i8; m];
    for i in 0..m {
        if is_eq(i) {
            side[i] = 1;
        } else if s.l[i] > -INF && z[i] - s.l[i] < -y[i] {
            side[i] = -1;
        } else if s.u[i] < INF && s.u[i] - z[i] < y[i] {
            side[i] = 1;
        }
    }
    let mut cx = vec![0.0; m];
    let mut seen: Vec<Vec<i8>> = Vec::new();
    let mut result = None;
    for _ in 0..POLISH_ROUNDS {
        let active: Vec<(usize, i8)> = (0..m).filter(|&i| side[i] != 0).map(|i| (i, side[i])).collect();
        let (xp, mult) = reduced_solve(s, &active)?;
        s.c.mul_vec(&xp, &mut cx);
        let mut yp = vec![0.0; m];
        for (k, &(i, _)) in active.iter().enumerate() {
            yp[i] = mult[k];
        }
        let mut next = side.clone();
        for i in 0..m {
            if is_eq(i) {
                continue;
            }
            let tol = POLISH_FEAS_TOL * (1.0 + cx[i].abs());
            match side[i] {
                -1 if yp[i] > 0.0 => next[i] = 0,
                1 if yp[i] < 0.0 => next[i] = 0,
                0 if cx[i] < s.l[i] - tol => next[i] = -1,
                0 if cx[i] > s.u[i] + tol => next[i] = 1,
                _ => {}
            }
        }
        if next == side {
            result = Some((xp, yp));
            break;
        }
        if seen.contains(&next) {
            break;
        }
        seen.push(side.clone());
        side = next;
    }
    let (xp, yp) = result?;
    let mut zp = vec![0.0; m];
    s.c.mul_vec(&xp, &mut zp);
    s.project(&mut zp);
    Some((xp, zp, yp))
}

fn reduced_solve(s: &Stacked, active: &[(usize, i8)]) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = s.n();
    let rows: Vec<usize> = active.iter().map(|a| a.0).collect();
    let target: Vec<f64> = active.iter().map(|&(i, side)| if side < 0 { s.l[i] } else { s.u[i] }).collect();
    let cr = s.c.select_rows(&rows);
    let mr = rows.len();
    let mut t = Vec::new();
    for (i, j, v) in s.p.triplets() {
        if i <= j {
            t.push((i, j, v));
        }
    }
    for j in 0..n {
        t.push((j, j, POLISH_DELTA));
    }
    for (i, j, v) in cr.triplets() {
        t.push((j, n + i, v));
    }
    for i in 0..mr {
        t.push((n + i, n + i, -POLISH_DELTA));
    }
    let k = CscMatrix::from_triplets(n + mr, n + mr, &t);
    let factor = LdlFactor::new(&k).ok()?;
    let mut rhs = vec![0.0; n + mr];
    for j in 0..n {
        rhs[j] = -s.q[j];
    }
    rhs[n..].copy_from_slice(&target);
    let mut sol = rhs.clone();
    factor.solve(&mut sol);
    for _ in 0..POLISH_REFINE {
        // residual against the unregularized system
        let mut r = rhs.clone();
        let (xs, ys) = sol.split_at(n);
        let mut px = vec![0.0; n];
        s.p.mul_vec(xs, &mut px);
        let mut cty = vec![0.0; n];
        cr.tmul_vec(ys, &mut cty);
        let mut cx = vec![0.0; mr];
        cr.mul_vec(xs, &mut cx);
        for j in 0..n {
            r[j] -= px[j] + cty[j];
        }
        for i in 0..mr {
            r[n + i] -= cx[i];
        }
        factor.solve(&mut r);
        for (a, b) in sol.iter_mut().zip(&r) {
            *a += b;
        }
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mult = sol.split_off(n);
    Some((sol, mult))
}
