mod common;

use std::collections::{HashMap, HashSet};

use common::{fixture, lindistflow_oracle};
use dopf::feeder::{apply_der_scenario, AreaModel, DerMode, DerScenario, FeederModel};
use dopf::linear::{check_der_modes, LinearError, LinearOpfProblem, ObjectiveKind, VarKind};
use dopf::opf::{solve_central_linear, OpfError, OpfSettings};
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use serde_json::{json, Value};

/// Replaces the DERs of a feeder document with `(bus, phases, kva, mode, p_fixed_kw)` records.
fn with_ders(text: &str, ders: &[(&str, &str, f64, &str, f64)]) -> String {
    let mut d: Value = serde_json::from_str(text).unwrap();
    d["ders"] = json!([]);
    let list = d["ders"].as_array_mut().unwrap();
    for &(bus, phases, kva, mode, p) in ders {
        let per = |x: f64| -> Vec<Value> {
            (0..3)
                .map(|i| if phases.contains((b'a' + i as u8) as char) { json!(x) } else { Value::Null })
                .collect()
        };
        let mut rec = json!({"bus": bus, "phases": phases, "s_kva": per(kva), "mode": mode});
        if mode == "reactive-dispatch" {
            rec["p_fixed_kw"] = json!(per(p));
        }
        list.push(rec);
    }
    d.to_string()
}

fn scale_doc_loads(text: &str, factors: &[f64]) -> String {
    let mut d: Value = serde_json::from_str(text).unwrap();
    for (b, f) in d["buses"].as_array_mut().unwrap().iter_mut().zip(factors.iter().cycle()) {
        for key in ["load_kw", "load_kvar"] {
            for v in b[key].as_array_mut().unwrap() {
                if let Some(x) = v.as_f64() {
                    *v = json!(x * f);
                }
            }
        }
    }
    d.to_string()
}

fn eq_residual(problem: &LinearOpfProblem, x: &[f64]) -> f64 {
    let mut ax = vec![0.0; problem.qp.eq_rhs.len()];
    problem.qp.eq.mul_vec(x, &mut ax);
    ax.iter().zip(&problem.qp.eq_rhs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

/// Decision vector assembled from the oracle state and the given DER
/// reactive set-points.
fn oracle_point(problem: &LinearOpfProblem, q_der: &[[f64; 3]]) -> Vec<f64> {
    let model = &problem.area.model;
    let doc = model.to_json_string();
    let mut gen = HashMap::new();
    for (d, der) in model.ders().iter().enumerate() {
        for p in der.phases.indices() {
            *gen.entry((model.bus(der.bus).id.clone(), p)).or_insert(Complex64::new(0.0, 0.0)) +=
                Complex64::new(der.p_fixed[p], q_der[d][p]);
        }
    }
    let (flows, volts) = lindistflow_oracle(&doc, model.source_voltage()[0], &gen);
    let map = &problem.map;
    let mut x = vec![0.0; map.len()];
    for (i, e) in map.entries.iter().enumerate() {
        x[i] = match e.kind {
            VarKind::P | VarKind::Q => {
                let to = &model.bus(model.branch(e.entity).to).id;
                let s = *flows.get(&(to.clone(), e.phase)).unwrap_or_else(|| panic!("{to} {}", e.phase));
                if e.kind == VarKind::P {
                    s.re
                } else {
                    s.im
                }
            }
            VarKind::V => volts[&(model.bus(e.entity).id.clone(), e.phase)],
            VarKind::Qd => q_der[e.entity][e.phase],
            VarKind::Pd => unreachable!("reactive-dispatch feeders only"),
        };
    }
    x
}

#[test]
fn two_bus_balance_and_drop_are_exact() {
    let model = FeederModel::from_json_str(&fixture("two_bus.json")).unwrap();
    let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::LossMin);
    let map = &problem.map;
    let mut x = vec![0.0; map.len()];
    x[map.p(0, 0).unwrap()] = 0.1;
    x[map.q(0, 0).unwrap()] = 0.05;
    x[map.v(0, 0).unwrap()] = 1.0;
    // r = 0.01, x = 0.02 pu
    x[map.v(1, 0).unwrap()] = 1.0 - 2.0 * (0.01 * 0.1 + 0.02 * 0.05);
    assert!(eq_residual(&problem, &x) < 1e-12);

    let sol = solve_central_linear(&model, ObjectiveKind::LossMin, false, &OpfSettings::default()).unwrap();
    let f = sol.linear.flow[0][0];
    assert!((f.re - 0.1).abs() < 1e-6 && (f.im - 0.05).abs() < 1e-6, "{f}");
    let objective = problem.qp.objective(&sol.x);
    assert!((objective - (0.1f64.powi(2) + 0.05f64.powi(2))).abs() < 1e-6);
}

#[test]
fn der_bounds_follow_rating() {
    let text = with_ders(
        &fixture("five_bus.json"),
        &[
            ("2", "a", 60.0, "reactive-dispatch", 50.0),
            ("3", "b", 60.0, "reactive-dispatch", 60.0),
        ],
    );
    let model = FeederModel::from_json_str(&text).unwrap();
    let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::LossMin);
    let s_base = model.s_base_kva();
    let i = problem.map.qd(0, 0).unwrap();
    assert!((problem.qp.upper[i] * s_base - 33.166).abs() < 1e-3);
    assert!((problem.qp.lower[i] * s_base + 33.166).abs() < 1e-3);
    let j = problem.map.qd(1, 1).unwrap();
    assert_eq!((problem.qp.lower[j], problem.qp.upper[j]), (0.0, 0.0));

    let text = with_ders(&fixture("five_bus.json"), &[("2", "abc", 60.0, "active-dispatch", 0.0)]);
    let model = FeederModel::from_json_str(&text).unwrap();
    let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::DerMax);
    for p in 0..3 {
        let i = problem.map.pd(0, p).unwrap();
        assert_eq!(problem.qp.lower[i], 0.0);
        assert!((problem.qp.upper[i] * s_base - 60.0).abs() < 1e-12);
    }
}

#[test]
fn der_max_without_binding_limits_runs_every_unit_at_rating() {
    let text = with_ders(
        &fixture("five_bus.json"),
        &[("3", "abc", 20.0, "active-dispatch", 0.0), ("5", "b", 15.0, "active-dispatch", 0.0)],
    );
    let model = FeederModel::from_json_str(&text).unwrap();
    let sol = solve_central_linear(&model, ObjectiveKind::DerMax, false, &OpfSettings::default()).unwrap();
    for (d, der) in model.ders().iter().enumerate() {
        for p in der.phases.indices() {
            assert!((sol.dispatch.p[d][p] - der.s_rated[p]).abs() < 1e-6, "{:?}", sol.dispatch);
        }
    }
    assert!((sol.objective_linear - 75.0).abs() < 1e-3);
}

#[test]
fn der_max_on_scenario_iii_is_voltage_limited() {
    let model = apply_der_scenario(&FeederModel::ieee123(), DerScenario::III).unwrap();
    let rating: f64 = model.ders().iter().flat_map(|d| d.s_rated).sum::<f64>() * model.s_base_kva();
    assert!((rating - 5400.0).abs() < 1e-6);
    let sol = solve_central_linear(&model, ObjectiveKind::DerMax, false, &OpfSettings::default()).unwrap();
    assert!(sol.objective_linear < rating - 1.0);
}

#[test]
fn objective_must_match_der_mode() {
    let text = with_ders(&fixture("five_bus.json"), &[("3", "a", 20.0, "active-dispatch", 0.0)]);
    let model = FeederModel::from_json_str(&text).unwrap();
    assert!(check_der_modes(&model, ObjectiveKind::DerMax).is_ok());
    match check_der_modes(&model, ObjectiveKind::LossMin) {
        Err(LinearError::IncompatibleMode { der, mode, .. }) => {
            assert_eq!((der, mode), (0, DerMode::ActiveDispatch))
        }
        other => panic!("{other:?}"),
    }
    let err = solve_central_linear(&model, ObjectiveKind::LossMin, false, &OpfSettings::default()).unwrap_err();
    assert!(matches!(err, OpfError::Incompatible(_)));

    let text = with_ders(&fixture("five_bus.json"), &[("3", "a", 20.0, "reactive-dispatch", 5.0)]);
    let model = FeederModel::from_json_str(&text).unwrap();
    assert!(check_der_modes(&model, ObjectiveKind::DerMax).is_err());

    let text = with_ders(&fixture("five_bus.json"), &[("3", "a", 20.0, "full-pq", 0.0)]);
    let model = FeederModel::from_json_str(&text).unwrap();
    assert!(check_der_modes(&model, ObjectiveKind::LossMin).is_ok());
    assert!(check_der_modes(&model, ObjectiveKind::DerMax).is_ok());
}

#[test]
fn variable_map_is_a_bijection() {
    let model = apply_der_scenario(&FeederModel::ieee123(), DerScenario::II).unwrap();
    let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::LossMin);
    let map = &problem.map;
    assert_eq!(map.len(), problem.qp.n());
    assert_eq!(problem.qp.eq.ncols, map.len());
    assert_eq!(problem.qp.ineq.ncols, map.len());
    let keys: HashSet<_> = map.entries.iter().map(|e| (format!("{:?}", e.kind), e.entity, e.phase)).collect();
    assert_eq!(keys.len(), map.len());
    for (i, e) in map.entries.iter().enumerate() {
        let back = match e.kind {
            VarKind::P => map.p(e.entity, e.phase),
            VarKind::Q => map.q(e.entity, e.phase),
            VarKind::V => map.v(e.entity, e.phase),
            VarKind::Pd => map.pd(e.entity, e.phase),
            VarKind::Qd => map.qd(e.entity, e.phase),
        };
        assert_eq!(back, Some(i));
    }
}

#[test]
fn equality_rows_have_full_rank_and_cost_is_convex() {
    for model in [
        FeederModel::from_json_str(&fixture("five_bus.json")).unwrap(),
        apply_der_scenario(&FeederModel::ieee123(), DerScenario::II).unwrap(),
    ] {
        let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::LossMin);
        let a = DMatrix::from_row_slice(
            problem.qp.eq.nrows,
            problem.qp.eq.ncols,
            &problem.qp.eq.to_dense().concat(),
        );
        let gram = &a * a.transpose();
        let chol = gram.cholesky().expect("A A' is positive definite");
        let min_pivot = chol.l().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        assert!(min_pivot > 1e-8, "{min_pivot}");
        assert!(problem.qp.hessian.is_symmetric(0.0));
        assert!(problem.qp.hessian.triplets().all(|(i, j, v)| i == j && v >= 0.0));
    }
}

#[test]
fn bundled_feeder_state_matches_oracle() {
    let model = apply_der_scenario(&FeederModel::ieee123(), DerScenario::II).unwrap();
    let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::LossMin);
    let q: Vec<[f64; 3]> = (0..model.ders().len())
        .map(|d| std::array::from_fn(|p| 0.01 * ((d * 3 + p) % 7) as f64 - 0.03))
        .collect();
    let q: Vec<[f64; 3]> = model
        .ders()
        .iter()
        .zip(q)
        .map(|(der, v)| std::array::from_fn(|p| if der.phases.has(p) { v[p] } else { 0.0 }))
        .collect();
    let x = oracle_point(&problem, &q);
    assert!(eq_residual(&problem, &x) < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn oracle_state_satisfies_equality_rows(
        factors in proptest::collection::vec(0.0f64..2.0, 5),
        q in proptest::collection::vec(-0.05f64..0.05, 6),
    ) {
        let text = with_ders(
            &scale_doc_loads(&fixture("five_bus.json"), &factors),
            &[("3", "abc", 80.0, "reactive-dispatch", 30.0), ("4", "ac", 60.0, "reactive-dispatch", 10.0)],
        );
        let model = FeederModel::from_json_str(&text).unwrap().with_source_voltage(1.03);
        let problem = LinearOpfProblem::build(AreaModel::whole(&model), ObjectiveKind::LossMin);
        let q_der = vec![[q[0], q[1], q[2]], [q[3], 0.0, q[5]]];
        let x = oracle_point(&problem, &q_der);
        prop_assert!(eq_residual(&problem, &x) < 1e-12);

        // perturbing one set-point alone moves every row by its coefficient
        let i = problem.map.qd(0, 1).unwrap();
        let eps = 1e-3;
        let mut y = x.clone();
        y[i] += eps;
        let mut ax = vec![0.0; problem.qp.eq_rhs.len()];
        let mut ay = ax.clone();
        problem.qp.eq.mul_vec(&x, &mut ax);
        problem.qp.eq.mul_vec(&y, &mut ay);
        let mut touched = 0;
        for r in 0..ax.len() {
            let coeff = problem.qp.eq.get(r, i);
            prop_assert!((ay[r] - ax[r] - coeff * eps).abs() < 1e-15);
            if coeff != 0.0 {
                touched += 1;
                prop_assert!(problem.constraints.eq_labels[r].starts_with("q-balance[3]"));
            }
        }
        prop_assert_eq!(touched, 1);

        // the consistent state after the shift also satisfies every row
        let mut shifted = q_der.clone();
        shifted[0][1] += eps;
        let z = oracle_point(&problem, &shifted);
        prop_assert!(eq_residual(&problem, &z) < 1e-12);
    }

    #[test]
    fn raising_the_voltage_ceiling_never_lowers_generation(factor in 0.2f64..1.2) {
        let base = with_ders(
            &scale_doc_loads(&fixture("five_bus.json"), &[factor]),
            &[("3", "abc", 400.0, "active-dispatch", 0.0), ("5", "b", 300.0, "active-dispatch", 0.0)],
        );
        let mut relaxed: Value = serde_json::from_str(&base).unwrap();
        for b in relaxed["buses"].as_array_mut().unwrap() {
            b["vmax"] = json!(b["vmax"].as_f64().unwrap() + 0.01);
        }
        let settings = OpfSettings::default();
        let m0 = FeederModel::from_json_str(&base).unwrap().with_source_voltage(1.03);
        let m1 = FeederModel::from_json_str(&relaxed.to_string()).unwrap().with_source_voltage(1.03);
        let g0 = solve_central_linear(&m0, ObjectiveKind::DerMax, false, &settings).unwrap().objective_linear;
        let g1 = solve_central_linear(&m1, ObjectiveKind::DerMax, false, &settings).unwrap().objective_linear;
        prop_assert!(g1 >= g0 - 1e-3, "{} < {}", g1, g0);
    }
}
