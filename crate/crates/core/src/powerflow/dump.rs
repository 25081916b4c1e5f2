use std::path::Path;

use serde::Serialize;

use super::{PowerFlowError, PowerFlowSolution};
use crate::feeder::FeederModel;

#[derive(Serialize)]
struct BusRow<'a> {
    bus: &'a str,
    phase: char,
    vmag_pu: f64,
    vang_deg: f64,
}

#[derive(Serialize)]
struct BranchRow {
    branch: String,
    phase: char,
    #[serde(rename = "P_kw")]
    p_kw: f64,
    #[serde(rename = "Q_kvar")]
    q_kvar: f64,
    #[serde(rename = "I_amp")]
    i_amp: f64,
}

/// Writes `<stem>_buses.csv` and `<stem>_branches.csv` into `dir`.
pub fn write_solution_csv(
    model: &FeederModel,
    sol: &PowerFlowSolution,
    dir: impl AsRef<Path>,
    stem: &str,
) -> Result<(), PowerFlowError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("{}_buses.csv", stem)))?;
    for (j, bus) in model.buses().iter().enumerate() {
        for p in bus.phases.iter() {
            let v = sol.voltage[j][p.index()];
            w.serialize(BusRow {
                bus: &bus.id,
                phase: p.as_char(),
                vmag_pu: v.norm(),
                vang_deg: v.arg().to_degrees(),
            })?;
        }
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(format!("{}_branches.csv", stem)))?;
    let s_base = model.s_base_kva();
    let i_base = model.i_base_amp();
    for (k, br) in model.branches().iter().enumerate() {
        let name = format!("{}-{}", model.bus(br.from).id, model.bus(br.to).id);
        for p in br.phases.iter() {
            let f = sol.s[k][p.index()][p.index()];
            w.serialize(BranchRow {
                branch: name.clone(),
                phase: p.as_char(),
                p_kw: f.re * s_base,
                q_kvar: f.im * s_base,
                i_amp: sol.current[k][p.index()].norm() * i_base,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
