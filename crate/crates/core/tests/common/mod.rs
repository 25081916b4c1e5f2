//! Independent reference implementations used only by tests.
#![allow(dead_code)]

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde_json::Value;

pub fn fixture(name: &str) -> String {
    let path = format!("{}/tests/fixtures/{}", env!("CARGO_MANIFEST_DIR"), name);
    std::fs::read_to_string(path).unwrap()
}

/// Receiving-end squared voltage of a single-phase two-bus line with unit
/// source voltage: the larger root of v^2 - (1 - 2(rP + xQ)) v + |z|^2 |s|^2 = 0.
pub fn two_bus_closed_form(r: f64, x: f64, p: f64, q: f64) -> f64 {
    let b = 1.0 - 2.0 * (r * p + x * q);
    let c = (r * r + x * x) * (p * p + q * q);
    (b + (b * b - 4.0 * c).sqrt()) / 2.0
}

/// Dense Newton-Raphson power flow on the bus admittance matrix, built
/// straight from a feeder JSON document. `gen` maps bus id to generation per
/// phase in pu. Returns phasors keyed by (bus id, phase index).
pub fn newton_power_flow(doc: &str, v0: f64, gen: &HashMap<String, [Complex64; 3]>) -> HashMap<(String, usize), Complex64> {
    let d: Value = serde_json::from_str(doc).unwrap();
    let base_kva = d["base_kva"].as_f64().unwrap();
    let base_kv = d["base_kv"].as_f64().unwrap();
    let s_base = base_kva / 3.0;
    let z_base = base_kv * base_kv * 1000.0 / base_kva;
    let phase_idx = |s: &str| -> Vec<usize> { s.chars().map(|c| (c as u8 - b'a') as usize).collect() };
    let id = |v: &Value| -> String {
        match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    };

    let mut nodes: Vec<(String, usize)> = Vec::new();
    let mut node_of = HashMap::new();
    let mut spec = Vec::new();
    let mut slack = Vec::new();
    for b in d["buses"].as_array().unwrap() {
        let bid = id(&b["id"]);
        for p in phase_idx(b["phases"].as_str().unwrap()) {
            let get = |key: &str| b[key].get(p).and_then(|v| v.as_f64()).unwrap_or(0.0);
            let g = gen.get(&bid).map_or(Complex64::new(0.0, 0.0), |g| g[p]);
            let s = g - Complex64::new(get("load_kw"), get("load_kvar")) / s_base
                + Complex64::new(0.0, get("shunt_kvar") / s_base);
            node_of.insert((bid.clone(), p), nodes.len());
            nodes.push((bid.clone(), p));
            spec.push(s);
            slack.push(b["slack"].as_bool().unwrap_or(false));
        }
    }
    let n = nodes.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in d["branches"].as_array().unwrap() {
        let ph = phase_idx(br["phases"].as_str().unwrap());
        let k = ph.len();
        let mut z = DMatrix::<Complex64>::zeros(k, k);
        for (a, &p) in ph.iter().enumerate() {
            for (b, &q) in ph.iter().enumerate() {
                z[(a, b)] = Complex64::new(
                    br["r_ohm"][p][q].as_f64().unwrap(),
                    br["x_ohm"][p][q].as_f64().unwrap(),
                ) / z_base;
            }
        }
        let yb = z.try_inverse().unwrap();
        let (f, t) = (id(&br["from"]), id(&br["to"]));
        for (a, &p) in ph.iter().enumerate() {
            for (b, &q) in ph.iter().enumerate() {
                let (fp, fq) = (node_of[&(f.clone(), p)], node_of[&(f.clone(), q)]);
                let (tp, tq) = (node_of[&(t.clone(), p)], node_of[&(t.clone(), q)]);
                y[(fp, fq)] += yb[(a, b)];
                y[(tp, tq)] += yb[(a, b)];
                y[(fp, tq)] -= yb[(a, b)];
                y[(tp, fq)] -= yb[(a, b)];
            }
        }
    }
    let nominal = |p: usize| Complex64::from_polar(1.0, -2.0 * PI / 3.0 * p as f64);
    let mut v: Vec<Complex64> = nodes.iter().map(|(_, p)| nominal(*p) * v0).collect();
    let free: Vec<usize> = (0..n).filter(|&i| !slack[i]).collect();
    let mismatch = |v: &[Complex64]| -> DVector<f64> {
        let vv = DVector::from_column_slice(v);
        let i = &y * vv;
        let mut f = DVector::zeros(2 * free.len());
        for (k, &node) in free.iter().enumerate() {
            let s = v[node] * i[node].conj() - spec[node];
            f[2 * k] = s.re;
            f[2 * k + 1] = s.im;
        }
        f
    };
    for _ in 0..50 {
        let f = mismatch(&v);
        if f.amax() < 1e-14 {
            break;
        }
        let m = 2 * free.len();
        let mut jac = DMatrix::zeros(m, m);
        let h = 1e-7;
        for (k, &node) in free.iter().enumerate() {
            for (c, dv) in [(2 * k, Complex64::new(h, 0.0)), (2 * k + 1, Complex64::new(0.0, h))] {
                let mut vp = v.clone();
                vp[node] += dv;
                let mut vm = v.clone();
                vm[node] -= dv;
                let col = (mismatch(&vp) - mismatch(&vm)) / (2.0 * h);
                jac.set_column(c, &col);
            }
        }
        let step = jac.lu().solve(&(-f)).unwrap();
        for (k, &node) in free.iter().enumerate() {
            v[node] += Complex64::new(step[2 * k], step[2 * k + 1]);
        }
    }
    assert!(mismatch(&v).amax() < 1e-12, "newton oracle did not converge");
    nodes.into_iter().zip(v).collect()
}

/// Dense strictly convex QP: min 1/2 x'Hx + f'x, Ax = b, Gx <= h.
pub struct DenseQp {
    pub h: DMatrix<f64>,
    pub f: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub hv: DVector<f64>,
}

fn subsets(m: usize) -> impl Iterator<Item = Vec<usize>> {
    (0u32..(1 << m)).map(move |mask| (0..m).filter(|i| mask & (1 << i) != 0).collect())
}

/// Active-set enumeration: the KKT point whose multipliers have the right
/// signs and which satisfies every inequality.
pub fn qp_active_set_oracle(p: &DenseQp) -> Option<DVector<f64>> {
    let n = p.f.len();
    let me = p.a.nrows();
    let mi = p.g.nrows();
    for active in subsets(mi) {
        let k = me + active.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        let mut rhs = DVector::zeros(n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        for j in 0..n {
            rhs[j] = -p.f[j];
        }
        for r in 0..me {
            for j in 0..n {
                kkt[(n + r, j)] = p.a[(r, j)];
                kkt[(j, n + r)] = p.a[(r, j)];
            }
            rhs[n + r] = p.b[r];
        }
        for (t, &r) in active.iter().enumerate() {
            for j in 0..n {
                kkt[(n + me + t, j)] = p.g[(r, j)];
                kkt[(j, n + me + t)] = p.g[(r, j)];
            }
            rhs[n + me + t] = p.hv[r];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let feasible = (0..mi).all(|r| (p.g.row(r) * &x)[0] <= p.hv[r] + 1e-9);
        let signs = (0..active.len()).all(|t| sol[n + me + t] >= -1e-9);
        if feasible && signs && sol.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    None
}

/// LP: min c'x, Ax = b, Gx <= h, lo <= x <= hi (all finite).
pub struct DenseLp {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub g: DMatrix<f64>,
    pub hv: DVector<f64>,
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

fn combinations(m: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..m {
            cur.push(i);
            rec(i + 1, m, k, cur, out);
            cur.pop();
        }
    }
    rec(0, m, k, &mut cur, &mut out);
    out
}

/// Enumerates vertices of the feasible polytope and returns the cheapest.
pub fn lp_vertex_oracle(p: &DenseLp) -> Option<(DVector<f64>, f64)> {
    let n = p.c.len();
    let me = p.a.nrows();
    // candidate tight rows: inequalities, then lower and upper bounds
    let mut rows: Vec<(DVector<f64>, f64)> = Vec::new();
    for r in 0..p.g.nrows() {
        rows.push((p.g.row(r).transpose(), p.hv[r]));
    }
    for j in 0..n {
        let mut e = DVector::zeros(n);
        e[j] = -1.0;
        rows.push((e.clone(), -p.lo[j]));
        rows.push((-e, p.hi[j]));
    }
    let mut best: Option<(DVector<f64>, f64)> = None;
    for pick in combinations(rows.len(), n - me) {
        let mut m = DMatrix::zeros(n, n);
        let mut rhs = DVector::zeros(n);
        for r in 0..me {
            m.set_row(r, &p.a.row(r));
            rhs[r] = p.b[r];
        }
        for (t, &k) in pick.iter().enumerate() {
            m.set_row(me + t, &rows[k].0.transpose());
            rhs[me + t] = rows[k].1;
        }
        if m.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(x) = m.lu().solve(&rhs) else { continue };
        let ok = rows.iter().all(|(g, h)| g.dot(&x) <= h + 1e-9)
            && (0..me).all(|r| ((p.a.row(r) * &x)[0] - p.b[r]).abs() < 1e-9);
        if !ok {
            continue;
        }
        let cost = p.c.dot(&x);
        if best.as_ref().map_or(true, |(_, c)| cost < c - 1e-12) {
            best = Some((x, cost));
        }
    }
    best
}

use dopf::solver::{CscMatrix, QpProblem};
use rand::Rng;

fn dense_to_csc(m: &DMatrix<f64>) -> CscMatrix {
    let rows: Vec<Vec<f64>> = (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
    let mut c = CscMatrix::from_dense(&rows);
    c.ncols = m.ncols();
    if c.colptr.len() != m.ncols() + 1 {
        c = CscMatrix::zeros(m.nrows(), m.ncols());
    }
    c
}

fn random_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random feasible strictly convex QP with inequality rows only (bounds
/// folded into rows), as a dense oracle problem and a solver problem.
pub fn random_qp<R: Rng>(rng: &mut R) -> (DenseQp, QpProblem) {
    let n = rng.gen_range(2..=5);
    let me = rng.gen_range(0..n.min(3));
    let mi = rng.gen_range(1..=6);
    let m = random_matrix(rng, n, n);
    let h = m.transpose() * &m + DMatrix::identity(n, n) * 0.1;
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = random_matrix(rng, me, n);
    let b = &a * &x0;
    let g = random_matrix(rng, mi, n);
    let hv = &g * &x0 + DVector::from_fn(mi, |_, _| rng.gen_range(0.0..0.5));
    let mut qp = QpProblem::new(n);
    qp.hessian = dense_to_csc(&h);
    qp.linear = f.iter().copied().collect();
    qp.eq = dense_to_csc(&a);
    qp.eq_rhs = b.iter().copied().collect();
    qp.ineq = dense_to_csc(&g);
    qp.ineq_rhs = hv.iter().copied().collect();
    (DenseQp { h, f, a, b, g, hv }, qp)
}

/// Random feasible bounded LP.
pub fn random_lp<R: Rng>(rng: &mut R) -> (DenseLp, QpProblem) {
    let n = rng.gen_range(2..=4);
    let me = rng.gen_range(0..n.min(2));
    let mi = rng.gen_range(0..=4);
    let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let a = random_matrix(rng, me, n);
    let b = &a * &x0;
    let g = random_matrix(rng, mi, n);
    let hv = &g * &x0 + DVector::from_fn(mi, |_, _| rng.gen_range(0.0..0.5));
    let lo = DVector::from_fn(n, |i, _| x0[i] - rng.gen_range(0.2..1.5));
    let hi = DVector::from_fn(n, |i, _| x0[i] + rng.gen_range(0.2..1.5));
    let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
    let mut qp = QpProblem::new(n);
    qp.linear = c.iter().copied().collect();
    qp.eq = dense_to_csc(&a);
    qp.eq_rhs = b.iter().copied().collect();
    qp.ineq = dense_to_csc(&g);
    qp.ineq_rhs = hv.iter().copied().collect();
    qp.lower = lo.iter().copied().collect();
    qp.upper = hi.iter().copied().collect();
    (DenseLp { c, a, b, g, hv, lo, hi }, qp)
}

/// Lossless three-phase branch-flow state computed straight from a feeder
/// JSON document: branch flows as subtree sums of net demand, squared
/// voltages by the textbook drop v_j = v_i - 2 Re[gamma_pq z*_pq S_q] with
/// gamma the nominal phase rotation table. `gen` maps (bus id, phase) to
/// generation in pu. Returns (flows keyed by (to-bus id, phase), squared
/// voltages keyed by (bus id, phase)).
pub fn lindistflow_oracle(
    doc: &str,
    v0: f64,
    gen: &HashMap<(String, usize), Complex64>,
) -> (HashMap<(String, usize), Complex64>, HashMap<(String, usize), f64>) {
    let d: Value = serde_json::from_str(doc).unwrap();
    let base_kva = d["base_kva"].as_f64().unwrap();
    let base_kv = d["base_kv"].as_f64().unwrap();
    let s_base = base_kva / 3.0;
    let z_base = base_kv * base_kv * 1000.0 / base_kva;
    let id = |v: &Value| -> String {
        match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        }
    };
    let phases = |s: &str| -> Vec<usize> { s.chars().map(|c| (c as u8 - b'a') as usize).collect() };
    let mut demand: HashMap<String, [Complex64; 3]> = HashMap::new();
    let mut bus_phases = HashMap::new();
    let mut root = String::new();
    for b in d["buses"].as_array().unwrap() {
        let bid = id(&b["id"]);
        let mut s = [Complex64::new(0.0, 0.0); 3];
        for p in phases(b["phases"].as_str().unwrap()) {
            let get = |key: &str| b[key].get(p).and_then(|v| v.as_f64()).unwrap_or(0.0);
            let g = gen.get(&(bid.clone(), p)).copied().unwrap_or_default();
            s[p] = Complex64::new(get("load_kw"), get("load_kvar") - get("shunt_kvar")) / s_base - g;
        }
        if b["slack"].as_bool().unwrap_or(false) {
            root = bid.clone();
        }
        bus_phases.insert(bid.clone(), phases(b["phases"].as_str().unwrap()));
        demand.insert(bid, s);
    }
    let branches = d["branches"].as_array().unwrap();
    let mut adjacent: HashMap<String, Vec<(String, usize)>> = HashMap::new();
    for (k, br) in branches.iter().enumerate() {
        let (f, t) = (id(&br["from"]), id(&br["to"]));
        adjacent.entry(f.clone()).or_default().push((t.clone(), k));
        adjacent.entry(t).or_default().push((f, k));
    }
    let mut kids: HashMap<String, Vec<(String, usize)>> = HashMap::new();
    let mut seen = std::collections::HashSet::from([root.clone()]);
    let mut queue = std::collections::VecDeque::from([root.clone()]);
    while let Some(bus) = queue.pop_front() {
        for (c, k) in adjacent.get(&bus).cloned().unwrap_or_default() {
            if seen.insert(c.clone()) {
                kids.entry(bus.clone()).or_default().push((c.clone(), k));
                queue.push_back(c);
            }
        }
    }
    fn subtree(bus: &str, kids: &HashMap<String, Vec<(String, usize)>>, demand: &HashMap<String, [Complex64; 3]>, out: &mut HashMap<String, [Complex64; 3]>) -> [Complex64; 3] {
        let mut s = demand[bus];
        for (c, _) in kids.get(bus).into_iter().flatten() {
            let t = subtree(c, kids, demand, out);
            for p in 0..3 {
                s[p] += t[p];
            }
        }
        out.insert(bus.to_string(), s);
        s
    }
    let mut through = HashMap::new();
    subtree(&root, &kids, &demand, &mut through);

    let a = Complex64::from_polar(1.0, -2.0 * PI / 3.0);
    let gamma = [
        [Complex64::new(1.0, 0.0), a * a, a],
        [a, Complex64::new(1.0, 0.0), a * a],
        [a * a, a, Complex64::new(1.0, 0.0)],
    ];
    let mut flows = HashMap::new();
    let mut volts = HashMap::new();
    for &p in &bus_phases[&root] {
        volts.insert((root.clone(), p), v0 * v0);
    }
    let mut stack = vec![root.clone()];
    while let Some(bus) = stack.pop() {
        for (c, k) in kids.get(&bus).cloned().unwrap_or_default() {
            let br = &branches[k];
            let bp = phases(br["phases"].as_str().unwrap());
            let s = through[&c];
            for &p in &bp {
                flows.insert((c.clone(), p), s[p]);
                let mut drop = 0.0;
                for &q in &bp {
                    let z = Complex64::new(br["r_ohm"][p][q].as_f64().unwrap(), br["x_ohm"][p][q].as_f64().unwrap()) / z_base;
                    drop += 2.0 * (gamma[p][q] * z.conj() * s[q]).re;
                }
                volts.insert((c.clone(), p), volts[&(bus.clone(), p)] - drop);
            }
            stack.push(c);
        }
    }
    (flows, volts)
}
