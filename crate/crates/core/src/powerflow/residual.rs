use num_complex::Complex64;

use super::{PowerFlowError, PowerFlowSolution};
use crate::feeder::FeederModel;

/// Largest absolute residual of each branch-flow equation.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ResidualReport {
    pub active_balance: f64,
    pub reactive_balance: f64,
    pub voltage_drop: f64,
    pub flow_current: f64,
    pub current_consistency: f64,
}

impl ResidualReport {
    pub fn max(&self) -> f64 {
        self.active_balance
            .max(self.reactive_balance)
            .max(self.voltage_drop)
            .max(self.flow_current)
            .max(self.current_consistency)
    }
}

/// Evaluates the exact power-flow equations at the stored solution values.
pub fn evaluate_nl_residuals(model: &FeederModel, sol: &PowerFlowSolution) -> Result<ResidualReport, PowerFlowError> {
    if sol.v.len() != model.n_buses() || sol.s.len() != model.n_branches() {
        return Err(PowerFlowError::DimensionMismatch(format!(
            "solution has {} buses and {} branches, feeder has {} and {}",
            sol.v.len(),
            sol.s.len(),
            model.n_buses(),
            model.n_branches()
        )));
    }
    let mut r = ResidualReport::default();
    for j in 0..model.n_buses() {
        let Some(k) = model.parent_branch(j) else { continue };
        let br = model.branch(k);
        let i = br.from;
        let ph = br.phases;
        let (l, delta, s) = (&sol.l[k], &sol.delta[k], &sol.s[k]);
        for p in ph.indices() {
            let mut delivered = s[p][p];
            for q in ph.indices() {
                let z = br.z[p][q];
                let (c, sn) = (delta[p][q].cos(), delta[p][q].sin());
                delivered -= Complex64::new(
                    l[p][q] * (z.re * c - z.im * sn),
                    l[p][q] * (z.im * c + z.re * sn),
                );
            }
            let mut downstream = sol.net_demand[j][p];
            for kk in model.out_branches(j) {
                downstream += sol.s[kk][p][p];
            }
            r.active_balance = r.active_balance.max((delivered.re - downstream.re).abs());
            r.reactive_balance = r.reactive_balance.max((delivered.im - downstream.im).abs());

            let mut rhs = sol.v[i][p];
            let idx: Vec<usize> = ph.indices().collect();
            for &q in &idx {
                let z = br.z[p][q];
                rhs -= 2.0 * (s[p][q] * z.conj()).re;
                rhs += z.norm_sqr() * l[q][q];
            }
            for (a, &q1) in idx.iter().enumerate() {
                for &q2 in &idx[a + 1..] {
                    let cross = br.z[p][q1] * br.z[p][q2].conj() * Complex64::from_polar(l[q1][q2], -delta[q1][q2]);
                    rhs += 2.0 * cross.re;
                }
            }
            r.voltage_drop = r.voltage_drop.max((sol.v[j][p] - rhs).abs());

            let flow = s[p][p].norm_sqr();
            r.flow_current = r.flow_current.max((flow - sol.v[i][p] * l[p][p]).abs());
            for q in ph.indices() {
                r.current_consistency = r
                    .current_consistency
                    .max((l[p][q] * l[p][q] - l[p][p] * l[q][q]).abs());
            }
        }
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::powerflow::{solve_powerflow, InjectionSet};

    #[test]
    fn converged_solution_has_small_residuals() {
        let m = FeederModel::ieee123();
        let sol = solve_powerflow(&m, &InjectionSet::none(&m)).unwrap();
        let r = evaluate_nl_residuals(&m, &sol).unwrap();
        assert!(r.max() <= 1e-6, "{:?}", r);
    }

    #[test]
    fn perturbed_voltage_shows_in_drop_residual() {
        let m = FeederModel::ieee123();
        let mut sol = solve_powerflow(&m, &InjectionSet::none(&m)).unwrap();
        let j = m.bus_index("50").unwrap();
        let mag = sol.v[j][0].sqrt() + 0.01;
        sol.v[j][0] = mag * mag;
        let r = evaluate_nl_residuals(&m, &sol).unwrap();
        assert!(r.voltage_drop >= 1e-3);
    }

    #[test]
    fn flat_solution_has_zero_residuals() {
        let m = FeederModel::ieee123().scale_loads_uniform(0.0);
        let sol = solve_powerflow(&m, &InjectionSet::none(&m)).unwrap();
        assert_eq!(evaluate_nl_residuals(&m, &sol).unwrap().max(), 0.0);
    }
}
