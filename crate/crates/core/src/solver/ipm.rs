use super::admm::{Stacked, INF};
use super::ldl::LdlFactor;
use super::sparse::{inf_norm, CscMatrix};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-10;
const REG: f64 = 1e-10;
const REFINE: usize = 3;
const STEP_FRACTION: f64 = 0.99;

/// One inequality side of a stacked row: `sign * c_i'x + s = sign * bound`.
struct Side {
    row: usize,
    sign: f64,
    bound: f64,
}

/// Primal-dual interior point (Mehrotra predictor-corrector) on the stacked
/// form without discs. Returns scaled (x, y) with `y` in the stacked row
/// convention, or `None` when it fails to reach tolerance.
pub(super) fn solve(s: &Stacked) -> Option<(Vec<f64>, Vec<f64>)> {
    debug_assert!(s.discs.is_empty());
    let (n, m) = (s.n(), s.m());
    let mut eq_rows = Vec::new();
    let mut sides = Vec::new();
    for i in 0..m {
        let fixed = (s.u[i] - s.l[i]).abs() <= 1e-12 * (1.0 + s.u[i].abs());
        if fixed {
            eq_rows.push(i);
            continue;
        }
        if s.u[i] < INF {
            sides.push(Side { row: i, sign: 1.0, bound: s.u[i] });
        }
        if s.l[i] > -INF {
            sides.push(Side { row: i, sign: -1.0, bound: -s.l[i] });
        }
    }
    let me = eq_rows.len();
    let mi = sides.len();
    let dim = n + me + mi;

    // rows of the reduced KKT matrix, one per equality row and inequality side
    let ct = s.c.transpose();
    let ct = &ct;
    let row_entries = |i: usize| {
        let (a, b) = (ct.colptr[i], ct.colptr[i + 1]);
        (a..b).map(move |k| (ct.rowind[k], ct.values[k]))
    };
    let build = |w: &[f64]| {
        let mut t = Vec::new();
        for (i, j, v) in s.p.triplets() {
            if i <= j {
                t.push((i, j, v));
            }
        }
        for j in 0..n {
            t.push((j, j, REG));
        }
        for (r, &i) in eq_rows.iter().enumerate() {
            for (j, v) in row_entries(i) {
                t.push((j, n + r, v));
            }
            t.push((n + r, n + r, -REG));
        }
        for (k, side) in sides.iter().enumerate() {
            for (j, v) in row_entries(side.row) {
                t.push((j, n + me + k, side.sign * v));
            }
            t.push((n + me + k, n + me + k, -(w[k] + REG)));
        }
        CscMatrix::from_triplets(dim, dim, &t)
    };

    // product with the unregularized KKT matrix, for refinement
    let kkt_mul = |w: &[f64], v: &[f64], out: &mut [f64]| {
        let (vx, rest) = v.split_at(n);
        let (vy, vz) = rest.split_at(me);
        let mut px = vec![0.0; n];
        s.p.mul_vec(vx, &mut px);
        let mut cx = vec![0.0; m];
        s.c.mul_vec(vx, &mut cx);
        let mut lam = vec![0.0; m];
        for (r, &i) in eq_rows.iter().enumerate() {
            lam[i] += vy[r];
        }
        for (k, side) in sides.iter().enumerate() {
            lam[side.row] += side.sign * vz[k];
        }
        let mut ctl = vec![0.0; n];
        s.c.tmul_vec(&lam, &mut ctl);
        for j in 0..n {
            out[j] = px[j] + ctl[j];
        }
        for (r, &i) in eq_rows.iter().enumerate() {
            out[n + r] = cx[i];
        }
        for (k, side) in sides.iter().enumerate() {
            out[n + me + k] = side.sign * cx[side.row] - w[k] * vz[k];
        }
    };

    let solve_refined = |factor: &LdlFactor, w: &[f64], rhs: &[f64]| -> Vec<f64> {
        let mut sol = rhs.to_vec();
        factor.solve(&mut sol);
        let mut prod = vec![0.0; dim];
        for _ in 0..REFINE {
            kkt_mul(w, &sol, &mut prod);
            let mut r: Vec<f64> = (0..dim).map(|i| rhs[i] - prod[i]).collect();
            factor.solve(&mut r);
            for (a, b) in sol.iter_mut().zip(&r) {
                *a += b;
            }
        }
        sol
    };

    // starting point from a regularized least-squares solve
    let mut w = vec![1.0; mi];
    let mut factor = LdlFactor::new(&build(&w)).ok()?;
    let mut rhs = vec![0.0; dim];
    for j in 0..n {
        rhs[j] = -s.q[j];
    }
    for (r, &i) in eq_rows.iter().enumerate() {
        rhs[n + r] = s.u[i];
    }
    for (k, side) in sides.iter().enumerate() {
        rhs[n + me + k] = side.bound;
    }
    let sol = solve_refined(&factor, &w, &rhs);
    let mut x = sol[..n].to_vec();
    let mut y = sol[n..n + me].to_vec();
    let mut z = sol[n + me..].to_vec();
    let mut cx = vec![0.0; m];
    s.c.mul_vec(&x, &mut cx);
    let mut sl: Vec<f64> = sides.iter().map(|side| side.bound - side.sign * cx[side.row]).collect();
    let shift = |v: &mut [f64]| {
        let lo = v.iter().cloned().fold(INF, f64::min);
        if lo < 1.0 {
            let d = 1.0 - lo.min(0.0);
            v.iter_mut().for_each(|a| *a = (*a).max(0.0) + d);
        }
    };
    shift(&mut sl);
    shift(&mut z);

    let q_norm = inf_norm(&s.q).max(1.0);
    let b_norm = eq_rows
        .iter()
        .map(|&i| s.u[i].abs())
        .chain(sides.iter().map(|side| side.bound.abs()))
        .fold(1.0f64, f64::max);

    let mut rd = vec![0.0; n];
    let mut rp = vec![0.0; me];
    let mut ri = vec![0.0; mi];
    for _ in 0..MAX_ITER {
        // residuals
        s.c.mul_vec(&x, &mut cx);
        let mut lam = vec![0.0; m];
        for (r, &i) in eq_rows.iter().enumerate() {
            lam[i] += y[r];
            rp[r] = cx[i] - s.u[i];
        }
        for (k, side) in sides.iter().enumerate() {
            lam[side.row] += side.sign * z[k];
            ri[k] = side.sign * cx[side.row] + sl[k] - side.bound;
        }
        let mut px = vec![0.0; n];
        s.p.mul_vec(&x, &mut px);
        let mut ctl = vec![0.0; n];
        s.c.tmul_vec(&lam, &mut ctl);
        for j in 0..n {
            rd[j] = px[j] + s.q[j] + ctl[j];
        }
        let mu = if mi > 0 {
            sl.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>() / mi as f64
        } else {
            0.0
        };
        let primal = inf_norm(&rp).max(inf_norm(&ri));
        if inf_norm(&rd) <= TOL * q_norm && primal <= TOL * b_norm && mu <= TOL {
            return Some((x, to_stacked(m, &eq_rows, &sides, &y, &z)));
        }
        if !x.iter().chain(&z).all(|v| v.is_finite()) {
            return None;
        }

        for k in 0..mi {
            w[k] = sl[k] / z[k];
        }
        factor.refactor(&build(&w)).ok()?;

        // predictor
        let mut rhs = vec![0.0; dim];
        for j in 0..n {
            rhs[j] = -rd[j];
        }
        for r in 0..me {
            rhs[n + r] = -rp[r];
        }
        for k in 0..mi {
            rhs[n + me + k] = -ri[k] + sl[k];
        }
        let d_aff = solve_refined(&factor, &w, &rhs);
        let dz_aff = &d_aff[n + me..];
        let ds_aff: Vec<f64> = (0..mi).map(|k| -sl[k] - w[k] * dz_aff[k]).collect();
        let a_aff = max_step(&sl, &ds_aff).min(max_step(&z, dz_aff));
        let mu_aff = if mi > 0 {
            (0..mi)
                .map(|k| (sl[k] + a_aff * ds_aff[k]) * (z[k] + a_aff * dz_aff[k]))
                .sum::<f64>()
                / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 { (mu_aff / mu).powi(3) } else { 0.0 };

        // corrector
        let rsz: Vec<f64> = (0..mi)
            .map(|k| sl[k] * z[k] + ds_aff[k] * dz_aff[k] - sigma * mu)
            .collect();
        for k in 0..mi {
            rhs[n + me + k] = -ri[k] + rsz[k] / z[k];
        }
        let d = solve_refined(&factor, &w, &rhs);
        let dz = &d[n + me..];
        let ds: Vec<f64> = (0..mi).map(|k| -(rsz[k] + sl[k] * dz[k]) / z[k]).collect();
        let alpha = (STEP_FRACTION * max_step(&sl, &ds).min(max_step(&z, dz))).min(1.0);
        for j in 0..n {
            x[j] += alpha * d[j];
        }
        for r in 0..me {
            y[r] += alpha * d[n + r];
        }
        for k in 0..mi {
            z[k] += alpha * dz[k];
            sl[k] += alpha * ds[k];
        }
    }
    None
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    let mut a: f64 = 1.0;
    for (x, d) in v.iter().zip(dv) {
        if *d < 0.0 {
            a = a.min(-x / d);
        }
    }
    a
}

/// Box multipliers: equality multiplier, or upper minus lower side.
fn to_stacked(m: usize, eq_rows: &[usize], sides: &[Side], y: &[f64], z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m];
    for (r, &i) in eq_rows.iter().enumerate() {
        out[i] = y[r];
    }
    for (k, side) in sides.iter().enumerate() {
        out[side.row] += side.sign * z[k];
    }
    out
}
