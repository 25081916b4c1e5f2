//! Topology and bandwidth sweep of the distributed OPF.

use dopf::linear::ObjectiveKind;
use dopf::runner::{stress_matrix, Case, Mode, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.scenario = "ii".into();
    config.objective = ObjectiveKind::LossMin;
    config.mode = Mode::DistributedLinearDt;
    let case = Case::prepare(&config)?;
    println!("{:>9} {:>6} {:>10} {:>6} {:>8} {:>9}", "topology", "bps", "loss kW", "rounds", "time s", "premature");
    for r in stress_matrix(&case, &config)? {
        println!(
            "{:>9} {:>6} {:>10.4} {:>6} {:>8.2} {:>9}",
            r.topology.to_string(),
            r.bandwidth_bps,
            r.objective_kw_or_mw.unwrap_or(f64::NAN),
            r.rounds,
            r.sim_time_s.unwrap_or(f64::NAN),
            r.premature_dispatches
        );
    }
    Ok(())
}
