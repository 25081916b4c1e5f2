//! No-OPF power flow on the bundled 123-bus feeder with scenario (i) DERs.

use dopf::feeder::{apply_der_scenario, DerScenario, FeederModel};
use dopf::powerflow::{evaluate_nl_residuals, solve_powerflow, total_loss, DerDispatch, InjectionSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = apply_der_scenario(&FeederModel::ieee123(), DerScenario::I)?;
    let inj = InjectionSet::from_dispatch(&model, &DerDispatch::no_opf(&model))?;
    let sol = solve_powerflow(&model, &inj)?;
    let (lo, hi) = sol.voltage_range(&model);
    println!("buses {}, branches {}, DERs {}", model.n_buses(), model.n_branches(), model.ders().len());
    println!("loss {:.3} kW", total_loss(&sol));
    println!("voltage range [{lo:.4}, {hi:.4}] pu");
    println!("largest residual {:.2e}", evaluate_nl_residuals(&model, &sol)?.max());
    Ok(())
}
