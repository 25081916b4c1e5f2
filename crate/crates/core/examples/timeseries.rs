//! Short seeded load series with DER maximization on scenario (iii).

use dopf::linear::ObjectiveKind;
use dopf::runner::{load_factors, timeseries_with_factors, Case, Mode, RunConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = RunConfig::default();
    config.scenario = "iii".into();
    config.objective = ObjectiveKind::DerMax;
    config.mode = Mode::DistributedLinearDt;
    config.seed = 1;
    config.timeseries.steps = 10;
    let case = Case::prepare(&config)?;
    let (rows, _) = timeseries_with_factors(&case, &config, &load_factors(&config))?;
    for r in rows {
        println!(
            "min {:>4.0}  load {:.3}  gen {:.4} MW  v_max {:.4} (no OPF {:.4})  over-limit {} (no OPF {})",
            r.minute,
            r.load_factor,
            r.objective_kw_or_mw.unwrap_or(f64::NAN),
            r.v_max_pu.unwrap_or(f64::NAN),
            r.baseline_v_max_pu,
            r.upper_violations.unwrap_or(0),
            r.baseline_upper_violations
        );
    }
    Ok(())
}
