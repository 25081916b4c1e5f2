//! Whole-feeder linear OPF, with and without projection through the twin.

use dopf::feeder::{apply_der_scenario, DerScenario, FeederModel};
use dopf::linear::ObjectiveKind;
use dopf::opf::{replay_dispatch, solve_central_linear, OpfSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let settings = OpfSettings::default();
    for (scenario, kind) in [
        (DerScenario::I, ObjectiveKind::LossMin),
        (DerScenario::II, ObjectiveKind::LossMin),
        (DerScenario::III, ObjectiveKind::DerMax),
    ] {
        let model = apply_der_scenario(&FeederModel::ieee123(), scenario)?;
        let sol = solve_central_linear(&model, kind, true, &settings)?;
        let (_, replay) = replay_dispatch(&model, &sol.dispatch, kind)?;
        let (scale, unit) = match kind {
            ObjectiveKind::LossMin => (1.0, "kW loss"),
            ObjectiveKind::DerMax => (1e-3, "MW generation"),
        };
        println!(
            "{:>3}: linear {:.3}, twin {:.3}, replay {:.3} {unit}",
            scenario.name(),
            sol.objective_linear * scale,
            sol.objective_twin.unwrap_or(f64::NAN) * scale,
            replay * scale
        );
    }
    Ok(())
}
