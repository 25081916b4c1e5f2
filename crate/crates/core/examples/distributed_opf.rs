//! Four-area distributed OPF over an ideal network, compared with the
//! central solution.

use dopf::commsim::{build_topology, TopologyKind};
use dopf::coordinator::{macro_iterate, CoordinatorConfig};
use dopf::feeder::{apply_der_scenario, AreaPartition, DerScenario, FeederModel};
use dopf::linear::ObjectiveKind;
use dopf::opf::{solve_central_linear, OpfSettings};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = apply_der_scenario(&FeederModel::ieee123(), DerScenario::I)?;
    let part = AreaPartition::ieee123_four_area(&model)?;
    let edges: Vec<(usize, usize)> = part.interfaces().iter().map(|i| (i.parent_area, i.child_area)).collect();
    let central = solve_central_linear(&model, ObjectiveKind::LossMin, false, &OpfSettings::default())?;
    println!("central linear loss {:.3} kW", central.objective_linear);
    for project in [false, true] {
        let topo = build_topology(TopologyKind::Ideal, part.n_areas(), &edges, 3000.0, 1e-4)?;
        let r = macro_iterate(&model, &part, topo, &CoordinatorConfig::new(ObjectiveKind::LossMin, project))?;
        println!(
            "{}: converged {} after {} rounds, {:.1} s simulated",
            if project { "with twin" } else { "linear" },
            r.converged,
            r.rounds,
            r.sim_time_s
        );
        match r.objective_twin {
            Some(t) => println!("  loss on the area twins {t:.3} kW"),
            None => println!("  linear loss {:.3} kW", r.objective_linear),
        }
        for (k, res) in r.residual_history.iter().enumerate() {
            println!("  batch {:>2}: boundary change {res:.2e}", k + 1);
        }
    }
    Ok(())
}
